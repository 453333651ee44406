use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::ProblemError;

/// Tolerances and limits for a continuation run.
///
/// The JSON form mirrors the field names exactly. Missing fields take their
/// defaults and unknown fields are rejected.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Relative part of the per-step local error bound.
    pub step_rel_tol: f64,
    /// Absolute part of the per-step local error bound.
    pub step_abs_tol: f64,
    /// Bound on `‖F(t, x)‖` after each correction.
    pub drift_tol: f64,
    pub corrector_max_iters: usize,
    /// A state this close to `∂D` counts as reaching the boundary.
    pub boundary_epsilon: f64,
    /// Singular-value ratio above which `F_x` is treated as rank deficient.
    pub condition_max: f64,
    pub max_steps: usize,
    pub min_step: f64,
    /// Radius of the residual ball accepted as a zero at `t = 1`.
    pub zero_radius: f64,
    /// Base finite-difference step, scaled by `1 + ‖x‖` at use.
    pub fd_step: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            step_rel_tol: 1e-8,
            step_abs_tol: 1e-10,
            drift_tol: 1e-9,
            corrector_max_iters: 10,
            boundary_epsilon: 1e-6,
            condition_max: 1e10,
            max_steps: 100_000,
            min_step: 1e-12,
            zero_radius: 1e-6,
            fd_step: 1e-6,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), ProblemError> {
        let positive = [
            ("step_rel_tol", self.step_rel_tol),
            ("step_abs_tol", self.step_abs_tol),
            ("drift_tol", self.drift_tol),
            ("boundary_epsilon", self.boundary_epsilon),
            ("condition_max", self.condition_max),
            ("min_step", self.min_step),
            ("zero_radius", self.zero_radius),
            ("fd_step", self.fd_step),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(ProblemError::Config(format!(
                    "{name} must be finite and strictly positive, got {value}"
                )));
            }
        }
        if self.min_step >= 1.0 {
            return Err(ProblemError::Config(format!(
                "min_step must be below 1, got {}",
                self.min_step
            )));
        }
        if self.corrector_max_iters == 0 {
            return Err(ProblemError::Config(
                "corrector_max_iters must be at least 1".into(),
            ));
        }
        if self.max_steps == 0 {
            return Err(ProblemError::Config("max_steps must be at least 1".into()));
        }
        Ok(())
    }

    pub fn from_json_str(text: &str) -> Result<Self, ProblemError> {
        let cfg: SolverConfig =
            serde_json::from_str(text).map_err(|e| ProblemError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json_file(path: &Path) -> Result<Self, ProblemError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ProblemError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }
}
