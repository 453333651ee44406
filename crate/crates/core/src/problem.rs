//! Homotopy problems, their two canonical constructions, and start-point
//! validation.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::config::SolverConfig;
use crate::domain::DomainSpec;
use crate::error::{EvalError, ProblemError};
use crate::oracle::{fd_jacobian_raw, fd_time_derivative_raw, relative_matrix_error};
use crate::{Matrix, Vector};

/// `(t, x) ↦ ℝᵐ`
pub type TimeMapFn = Arc<dyn Fn(f64, &Vector) -> Vector + Send + Sync>;
/// `(t, x) ↦ ℝ^{m×n}`
pub type TimeJacobianFn = Arc<dyn Fn(f64, &Vector) -> Matrix + Send + Sync>;
/// `x ↦ ℝⁿ`
pub type MapFn = Arc<dyn Fn(&Vector) -> Vector + Send + Sync>;
/// `x ↦ ℝ^{n×n}`
pub type MapJacobianFn = Arc<dyn Fn(&Vector) -> Matrix + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DerivativeMode {
    Analytic,
    FiniteDifference,
}

/// How the derivative of a user map is obtained.
#[derive(Clone)]
pub enum Jacobian {
    Analytic(MapJacobianFn),
    /// Central differences with base step `step`, scaled by `1 + ‖x‖`.
    FiniteDifference {
        step: f64,
    },
}

impl Jacobian {
    pub fn analytic(df: impl Fn(&Vector) -> Matrix + Send + Sync + 'static) -> Self {
        Self::Analytic(Arc::new(df))
    }

    fn mode(&self) -> DerivativeMode {
        match self {
            Self::Analytic(_) => DerivativeMode::Analytic,
            Self::FiniteDifference { .. } => DerivativeMode::FiniteDifference,
        }
    }

    fn resolve(&self, f: &MapFn) -> MapJacobianFn {
        match self {
            Self::Analytic(df) => df.clone(),
            Self::FiniteDifference { step } => {
                let f = f.clone();
                let step = *step;
                Arc::new(move |x: &Vector| {
                    let h = step * (1.0 + x.norm());
                    fd_jacobian_raw(|y| f(y), x, h)
                })
            }
        }
    }
}

/// A parametric map `F: [0,1] × D → ℝᵐ` with its partial derivatives.
///
/// Immutable once built; evaluators are shared by reference and may be called
/// from several runs at once.
#[derive(Clone)]
pub struct HomotopyProblem {
    dim_x: usize,
    dim_y: usize,
    f: TimeMapFn,
    ft: TimeMapFn,
    fx: TimeJacobianFn,
    mode: DerivativeMode,
    domain: DomainSpec,
}

impl fmt::Debug for HomotopyProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HomotopyProblem")
            .field("dim_x", &self.dim_x)
            .field("dim_y", &self.dim_y)
            .field("mode", &self.mode)
            .field("domain", &self.domain)
            .finish_non_exhaustive()
    }
}

fn check_dims(dim_x: usize, dim_y: usize) -> Result<(), ProblemError> {
    if dim_x == 0 || dim_y == 0 {
        return Err(ProblemError::Dimension(
            "dimensions must be positive".into(),
        ));
    }
    if dim_y > dim_x {
        return Err(ProblemError::Dimension(format!(
            "dim_y = {dim_y} exceeds dim_x = {dim_x}; F_x cannot have a right inverse"
        )));
    }
    Ok(())
}

impl HomotopyProblem {
    /// A problem with caller-supplied `F`, `F_t` and `F_x`.
    pub fn new(
        dim_x: usize,
        dim_y: usize,
        f: impl Fn(f64, &Vector) -> Vector + Send + Sync + 'static,
        ft: impl Fn(f64, &Vector) -> Vector + Send + Sync + 'static,
        fx: impl Fn(f64, &Vector) -> Matrix + Send + Sync + 'static,
        domain: DomainSpec,
    ) -> Result<Self, ProblemError> {
        check_dims(dim_x, dim_y)?;
        domain.check(dim_x)?;
        Ok(Self {
            dim_x,
            dim_y,
            f: Arc::new(f),
            ft: Arc::new(ft),
            fx: Arc::new(fx),
            mode: DerivativeMode::Analytic,
            domain,
        })
    }

    /// A problem whose derivatives are synthesized from `F` by central
    /// differences with step `fd_step·(1 + ‖x‖)` in `x` and `fd_step` in `t`.
    pub fn with_finite_differences(
        dim_x: usize,
        dim_y: usize,
        f: impl Fn(f64, &Vector) -> Vector + Send + Sync + 'static,
        domain: DomainSpec,
        fd_step: f64,
    ) -> Result<Self, ProblemError> {
        check_dims(dim_x, dim_y)?;
        domain.check(dim_x)?;
        if !(fd_step.is_finite() && fd_step > 0.0) {
            return Err(ProblemError::Config(format!(
                "fd_step must be positive, got {fd_step}"
            )));
        }
        let f: TimeMapFn = Arc::new(f);
        let (f_t, f_x) = (f.clone(), f.clone());
        Ok(Self {
            dim_x,
            dim_y,
            f,
            ft: Arc::new(move |t, x: &Vector| {
                fd_time_derivative_raw(|s, y| f_t(s, y), t, x, fd_step)
            }),
            fx: Arc::new(move |t, x: &Vector| {
                let h = fd_step * (1.0 + x.norm());
                fd_jacobian_raw(|y| f_x(t, y), x, h)
            }),
            mode: DerivativeMode::FiniteDifference,
            domain,
        })
    }

    pub fn dim_x(&self) -> usize {
        self.dim_x
    }

    pub fn dim_y(&self) -> usize {
        self.dim_y
    }

    pub fn domain(&self) -> &DomainSpec {
        &self.domain
    }

    pub fn derivative_mode(&self) -> DerivativeMode {
        self.mode
    }

    fn check_input(&self, x: &Vector) -> Result<(), EvalError> {
        if x.len() != self.dim_x {
            return Err(EvalError::Shape {
                what: "state",
                expected: self.dim_x.to_string(),
                got: x.len().to_string(),
            });
        }
        Ok(())
    }

    fn check_vector(&self, what: &'static str, v: Vector) -> Result<Vector, EvalError> {
        if v.len() != self.dim_y {
            return Err(EvalError::Shape {
                what,
                expected: self.dim_y.to_string(),
                got: v.len().to_string(),
            });
        }
        if v.iter().any(|c| !c.is_finite()) {
            return Err(EvalError::NonFinite { what });
        }
        Ok(v)
    }

    pub fn eval_f(&self, t: f64, x: &Vector) -> Result<Vector, EvalError> {
        self.check_input(x)?;
        self.check_vector("F", (self.f)(t, x))
    }

    pub fn eval_ft(&self, t: f64, x: &Vector) -> Result<Vector, EvalError> {
        self.check_input(x)?;
        self.check_vector("F_t", (self.ft)(t, x))
    }

    pub fn eval_fx(&self, t: f64, x: &Vector) -> Result<Matrix, EvalError> {
        self.check_input(x)?;
        let m = (self.fx)(t, x);
        if m.nrows() != self.dim_y || m.ncols() != self.dim_x {
            return Err(EvalError::Shape {
                what: "F_x",
                expected: format!("{}x{}", self.dim_y, self.dim_x),
                got: format!("{}x{}", m.nrows(), m.ncols()),
            });
        }
        if m.iter().any(|c| !c.is_finite()) {
            return Err(EvalError::NonFinite { what: "F_x" });
        }
        Ok(m)
    }

    /// `‖F(t, x)‖`.
    pub fn residual(&self, t: f64, x: &Vector) -> Result<f64, EvalError> {
        Ok(self.eval_f(t, x)?.norm())
    }
}

/// `x = f(x)` on a domain containing the origin.
#[derive(Clone)]
pub struct FixedPointProblem {
    pub dim: usize,
    pub f: MapFn,
    pub jacobian: Jacobian,
    pub domain: DomainSpec,
}

impl FixedPointProblem {
    pub fn new(
        dim: usize,
        f: impl Fn(&Vector) -> Vector + Send + Sync + 'static,
        jacobian: Jacobian,
        domain: DomainSpec,
    ) -> Self {
        Self {
            dim,
            f: Arc::new(f),
            jacobian,
            domain,
        }
    }

    pub fn eval_f(&self, x: &Vector) -> Vector {
        (self.f)(x)
    }
}

/// Solve `f(x) = y` for a map `f: ℝⁿ → ℝⁿ` with invertible derivative.
#[derive(Clone)]
pub struct InverseFunctionProblem {
    pub dim: usize,
    pub f: MapFn,
    pub jacobian: Jacobian,
    pub target_y: Vector,
}

impl InverseFunctionProblem {
    pub fn new(
        dim: usize,
        f: impl Fn(&Vector) -> Vector + Send + Sync + 'static,
        jacobian: Jacobian,
        target_y: Vector,
    ) -> Self {
        Self {
            dim,
            f: Arc::new(f),
            jacobian,
            target_y,
        }
    }

    /// Same map, different target.
    pub fn with_target(&self, target_y: Vector) -> Self {
        Self {
            target_y,
            ..self.clone()
        }
    }

    pub fn eval_f(&self, x: &Vector) -> Vector {
        (self.f)(x)
    }
}

/// `F(t,x) = x − t·f(x)`, so `F_t = −f(x)` and `F_x = I − t·f′(x)`.
pub fn make_fixed_point_homotopy(fp: &FixedPointProblem) -> Result<HomotopyProblem, ProblemError> {
    check_dims(fp.dim, fp.dim)?;
    fp.domain.check(fp.dim)?;
    let origin = Vector::zeros(fp.dim);
    if !fp.domain.contains(&origin) {
        return Err(ProblemError::DomainViolation(
            "the origin must lie in the interior of the domain".into(),
        ));
    }
    let (f, f_t) = (fp.f.clone(), fp.f.clone());
    let df = fp.jacobian.resolve(&fp.f);
    let n = fp.dim;
    Ok(HomotopyProblem {
        dim_x: n,
        dim_y: n,
        f: Arc::new(move |t, x: &Vector| x - f(x) * t),
        ft: Arc::new(move |_, x: &Vector| -f_t(x)),
        fx: Arc::new(move |t, x: &Vector| {
            let d = df(x);
            if d.nrows() != n || d.ncols() != n {
                return d;
            }
            Matrix::identity(n, n) - d * t
        }),
        mode: fp.jacobian.mode(),
        domain: fp.domain.clone(),
    })
}

/// `F(t,x) = f(x) − (1−t)·f(0) − t·y` on the whole space.
///
/// `f(0)` is evaluated once here, so `F(0, 0)` is exactly zero.
pub fn make_inverse_homotopy(ip: &InverseFunctionProblem) -> Result<HomotopyProblem, ProblemError> {
    check_dims(ip.dim, ip.dim)?;
    if ip.target_y.len() != ip.dim {
        return Err(ProblemError::Dimension(format!(
            "target has length {}, expected {}",
            ip.target_y.len(),
            ip.dim
        )));
    }
    let f0 = ip.eval_f(&Vector::zeros(ip.dim));
    if f0.len() != ip.dim {
        return Err(ProblemError::Dimension(format!(
            "f(0) has length {}, expected {}",
            f0.len(),
            ip.dim
        )));
    }
    let y = ip.target_y.clone();
    let ft = &f0 - &y;
    let f = ip.f.clone();
    let df = ip.jacobian.resolve(&ip.f);
    Ok(HomotopyProblem {
        dim_x: ip.dim,
        dim_y: ip.dim,
        f: Arc::new(move |t, x: &Vector| f(x) - &f0 * (1.0 - t) - &y * t),
        ft: Arc::new(move |_, _: &Vector| ft.clone()),
        fx: Arc::new(move |_, x: &Vector| df(x)),
        mode: ip.jacobian.mode(),
        domain: DomainSpec::WholeSpace,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationKind {
    DomainViolation,
    ResidualViolation,
    ShapeViolation,
    NonFinite,
    DerivativeMismatch,
    ConfigViolation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, kind: ViolationKind) -> bool {
        self.violations.iter().any(|v| v.kind == kind)
    }

    fn push(&mut self, kind: ViolationKind, detail: impl Into<String>) {
        self.violations.push(Violation {
            kind,
            detail: detail.into(),
        });
    }
}

/// Relative tolerance for analytic-versus-finite-difference derivatives.
pub const DERIVATIVE_AGREEMENT_TOL: f64 = 1e-4;

/// Checks that `x0` is a usable start: an interior point with `F(0, x0) ≈ 0`,
/// consistent evaluator shapes, and analytic derivatives that agree with
/// finite differences at `x0`. Every violation found is reported.
pub fn validate_problem(p: &HomotopyProblem, x0: &Vector, cfg: &SolverConfig) -> ValidationReport {
    let mut report = ValidationReport::default();
    if let Err(e) = cfg.validate() {
        report.push(ViolationKind::ConfigViolation, e.to_string());
    }
    if x0.len() != p.dim_x {
        report.push(
            ViolationKind::ShapeViolation,
            format!("x0 has length {}, expected {}", x0.len(), p.dim_x),
        );
        return report;
    }
    if !p.domain.contains(x0) {
        report.push(
            ViolationKind::DomainViolation,
            "x0 is not in the domain interior",
        );
    }

    let record = |report: &mut ValidationReport, e: EvalError| match e {
        EvalError::Shape { .. } => report.push(ViolationKind::ShapeViolation, e.to_string()),
        EvalError::NonFinite { .. } => report.push(ViolationKind::NonFinite, e.to_string()),
    };

    match p.eval_f(0.0, x0) {
        Ok(v) => {
            let r = v.norm();
            if r > cfg.drift_tol {
                report.push(
                    ViolationKind::ResidualViolation,
                    format!("‖F(0, x0)‖ = {r:e} exceeds drift_tol = {:e}", cfg.drift_tol),
                );
            }
        }
        Err(e) => record(&mut report, e),
    }
    let ft = p.eval_ft(0.0, x0).map_err(|e| record(&mut report, e)).ok();
    let fx = p.eval_fx(0.0, x0).map_err(|e| record(&mut report, e)).ok();

    if p.mode == DerivativeMode::Analytic {
        let h = cfg.fd_step * (1.0 + x0.norm());
        if let Some(fx) = fx {
            let fd = fd_jacobian_raw(|y| (p.f)(0.0, y), x0, h);
            let err = relative_matrix_error(&fx, &fd);
            if !(err <= DERIVATIVE_AGREEMENT_TOL) {
                report.push(
                    ViolationKind::DerivativeMismatch,
                    format!("F_x differs from finite differences by {err:e} (relative)"),
                );
            }
        }
        if let Some(ft) = ft {
            let fd = fd_time_derivative_raw(|s, y| (p.f)(s, y), 0.0, x0, cfg.fd_step);
            let err = (&ft - &fd).norm() / (1.0 + ft.norm());
            if !(err <= DERIVATIVE_AGREEMENT_TOL) {
                report.push(
                    ViolationKind::DerivativeMismatch,
                    format!("F_t differs from finite differences by {err:e} (relative)"),
                );
            }
        }
    }
    report
}
