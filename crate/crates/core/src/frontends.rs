//! Fixed-point search and global inverse evaluation on top of the flow.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::SolverConfig;
use crate::error::{FlowError, ProblemError};
use crate::flow::{integrate, ContinuationOutcome, Trace};
use crate::problem::{
    make_fixed_point_homotopy, make_inverse_homotopy, validate_problem, FixedPointProblem,
    InverseFunctionProblem, ValidationReport,
};
use crate::Vector;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FrontendError {
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error("start point rejected: {0:?}")]
    Invalid(ValidationReport),
    #[error("sample {index} is {distance:e} from the boundary")]
    SampleNotOnBoundary { index: usize, distance: f64 },
    #[error("inverse solve failed: {outcome:?}")]
    SolveFailed {
        outcome: Box<ContinuationOutcome>,
        trace: Box<Trace>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum FixedPointResult {
    Fixed {
        x_hat: Vector,
        residual: f64,
    },
    /// `τ·f(ξ) ≈ ξ` with `ξ` next to `∂D`: the continuation escaped.
    BoundaryEigenpair {
        tau: f64,
        xi: Vector,
        eigen_residual: f64,
    },
    Failed(ContinuationOutcome),
}

impl FixedPointResult {
    pub fn label(&self) -> &'static str {
        match self {
            Self::Fixed { .. } => "fixed",
            Self::BoundaryEigenpair { .. } => "boundary_eigenpair",
            Self::Failed(_) => "failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPointCheck {
    pub x: Vec<f64>,
    pub fx: Vec<f64>,
    /// `‖f(x)‖ ≤ ‖x‖`
    pub cond1: bool,
    /// `‖f(x)‖ ≤ ‖x − f(x)‖`
    pub cond2: bool,
    /// `‖f(x)‖ ≤ √(‖x‖² + ‖x − f(x)‖²)`
    pub cond3: bool,
    /// `‖f(x)‖ ≤ max(‖x − f(x)‖, ‖x‖)`
    pub cond4: bool,
}

impl BoundaryPointCheck {
    pub fn evaluate(x: &Vector, fx: &Vector) -> Self {
        let nf = fx.norm();
        let nx = x.norm();
        let nd = (x - fx).norm();
        Self {
            x: x.as_slice().to_vec(),
            fx: fx.as_slice().to_vec(),
            cond1: nf <= nx,
            cond2: nf <= nd,
            cond3: nf <= (nx * nx + nd * nd).sqrt(),
            cond4: nf <= nd.max(nx),
        }
    }

    pub fn any(&self) -> bool {
        self.cond1 || self.cond2 || self.cond3 || self.cond4
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryConditionReport {
    pub points: Vec<BoundaryPointCheck>,
    pub all_points_satisfy_some: bool,
    /// Largest `‖f(x)‖` over the samples; a finite stand-in for `f(∂D)`
    /// being bounded.
    pub max_image_norm: f64,
}

/// Evaluates the four boundary inequalities at each sample.
///
/// Every sample must be within `boundary_epsilon` of `∂D`.
pub fn check_boundary_conditions(
    fp: &FixedPointProblem,
    samples: &[Vector],
    boundary_epsilon: f64,
) -> Result<BoundaryConditionReport, FrontendError> {
    let mut points = Vec::with_capacity(samples.len());
    let mut max_image_norm: f64 = 0.0;
    for (index, x) in samples.iter().enumerate() {
        let distance = fp.domain.boundary_distance(x);
        if !(distance <= boundary_epsilon) {
            return Err(FrontendError::SampleNotOnBoundary { index, distance });
        }
        let fx = fp.eval_f(x);
        max_image_norm = max_image_norm.max(fx.norm());
        points.push(BoundaryPointCheck::evaluate(x, &fx));
    }
    Ok(BoundaryConditionReport {
        all_points_satisfy_some: points.iter().all(BoundaryPointCheck::any),
        points,
        max_image_norm,
    })
}

#[derive(Debug, Clone)]
pub struct FixedPointSolve {
    pub result: FixedPointResult,
    pub outcome: ContinuationOutcome,
    pub trace: Trace,
    /// Present when the path escaped at `τ < 1`; the boundary inequalities
    /// evaluated at `ξ`.
    pub escape_check: Option<BoundaryConditionReport>,
}

/// Continues `F(t,x) = x − t·f(x)` from the origin.
pub fn solve_fixed_point(
    fp: &FixedPointProblem,
    cfg: &SolverConfig,
) -> Result<FixedPointSolve, FrontendError> {
    let p = make_fixed_point_homotopy(fp)?;
    let x0 = Vector::zeros(fp.dim);
    let report = validate_problem(&p, &x0, cfg);
    if !report.is_clean() {
        return Err(FrontendError::Invalid(report));
    }
    let (trace, outcome) = integrate(&p, &x0, cfg)?;
    let mut escape_check = None;
    let result = match &outcome {
        ContinuationOutcome::InteriorZero { x1, .. } => {
            let residual = (fp.eval_f(x1) - x1).norm();
            if residual <= cfg.drift_tol {
                FixedPointResult::Fixed {
                    x_hat: x1.clone(),
                    residual,
                }
            } else {
                FixedPointResult::Failed(outcome.clone())
            }
        }
        ContinuationOutcome::BoundaryApproach { tau, x_near, .. } => {
            let eigen_residual = (fp.eval_f(x_near) - x_near / *tau).norm();
            if *tau < 1.0 {
                escape_check = Some(check_boundary_conditions(
                    fp,
                    std::slice::from_ref(x_near),
                    cfg.boundary_epsilon,
                )?);
            }
            if eigen_residual <= 10.0 * cfg.drift_tol * (1.0 + 1.0 / tau) {
                FixedPointResult::BoundaryEigenpair {
                    tau: *tau,
                    xi: x_near.clone(),
                    eigen_residual,
                }
            } else {
                FixedPointResult::Failed(outcome.clone())
            }
        }
        _ => FixedPointResult::Failed(outcome.clone()),
    };
    Ok(FixedPointSolve {
        result,
        outcome,
        trace,
        escape_check,
    })
}

#[derive(Debug, Clone)]
pub struct InverseSolve {
    pub x: Vector,
    pub residual: f64,
    pub trace: Trace,
    pub outcome: ContinuationOutcome,
}

/// `ψ(y)`: the end point of `ẋ = f′(x)⁻¹(y − f(0))`, `x(0) = 0`.
pub fn inverse_map(
    ip: &InverseFunctionProblem,
    cfg: &SolverConfig,
) -> Result<InverseSolve, FrontendError> {
    let p = make_inverse_homotopy(ip)?;
    let x0 = Vector::zeros(ip.dim);
    let (trace, outcome) = integrate(&p, &x0, cfg)?;
    if let ContinuationOutcome::InteriorZero { x1, .. } = &outcome {
        let residual = (ip.eval_f(x1) - &ip.target_y).norm();
        if residual <= cfg.drift_tol {
            return Ok(InverseSolve {
                x: x1.clone(),
                residual,
                trace,
                outcome,
            });
        }
    }
    Err(FrontendError::SolveFailed {
        outcome: Box::new(outcome),
        trace: Box::new(trace),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::DomainSpec;
    use crate::problem::Jacobian;
    use crate::Matrix;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    fn scalar_fp(
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        df: impl Fn(f64) -> f64 + Send + Sync + 'static,
        domain: DomainSpec,
    ) -> FixedPointProblem {
        FixedPointProblem::new(
            1,
            move |x| x.map(&f),
            Jacobian::analytic(move |x| Matrix::from_element(1, 1, df(x[0]))),
            domain,
        )
    }

    fn cubic(y: f64) -> InverseFunctionProblem {
        InverseFunctionProblem::new(
            1,
            |x| x.map(|s| s * s * s + s),
            Jacobian::analytic(|x| Matrix::from_element(1, 1, 3.0 * x[0] * x[0] + 1.0)),
            v(&[y]),
        )
    }

    #[test]
    fn cos_has_a_fixed_point() {
        let cfg = SolverConfig::default();
        let solve = solve_fixed_point(
            &scalar_fp(f64::cos, |s| -s.sin(), DomainSpec::WholeSpace),
            &cfg,
        )
        .unwrap();
        let FixedPointResult::Fixed { x_hat, residual } = solve.result else {
            panic!("{:?}", solve.result)
        };
        assert!((x_hat[0] - 0.7390851332).abs() < 1e-8);
        assert!(residual <= 1e-8);
        assert!((x_hat[0].cos() - x_hat[0]).abs() <= cfg.drift_tol);
    }

    #[test]
    fn constant_map_in_ball() {
        let c = v(&[0.3, -0.2]);
        let cc = c.clone();
        let fp = FixedPointProblem::new(
            2,
            move |_| cc.clone(),
            Jacobian::FiniteDifference { step: 1e-6 },
            DomainSpec::ball(Vector::zeros(2), 1.0),
        );
        let solve = solve_fixed_point(&fp, &SolverConfig::default()).unwrap();
        let FixedPointResult::Fixed { x_hat, .. } = solve.result else {
            panic!("{:?}", solve.result)
        };
        assert!((x_hat - c).norm() < 1e-12);
    }

    #[test]
    fn escape_yields_boundary_eigenpair() {
        let cfg = SolverConfig::default();
        let fp = scalar_fp(|s| s + 0.5, |_| 1.0, DomainSpec::ball(v(&[0.0]), 1.0));
        let solve = solve_fixed_point(&fp, &cfg).unwrap();
        let FixedPointResult::BoundaryEigenpair {
            tau,
            xi,
            eigen_residual,
        } = &solve.result
        else {
            panic!("{:?}", solve.result)
        };
        assert!((tau - 2.0 / 3.0).abs() < 1e-3);
        assert!((xi[0] - 1.0).abs() < 1e-3);
        assert!(*eigen_residual <= 10.0 * cfg.drift_tol * (1.0 + 1.0 / tau));
        assert!((fp.eval_f(xi) * *tau - xi).norm() <= 10.0 * cfg.drift_tol);
        // f(1) = 1.5 = (1 / (2/3))·1
        assert!((fp.eval_f(&v(&[1.0]))[0] - 1.0 / (2.0 / 3.0)).abs() < 1e-15);
        let check = solve.escape_check.expect("τ < 1 attaches the check");
        let pt = &check.points[0];
        assert!(!pt.cond1 && !pt.cond2 && !pt.cond3 && !pt.cond4);
        assert!(!check.all_points_satisfy_some);
    }

    #[test]
    fn origin_outside_domain_is_an_error() {
        let fp = scalar_fp(f64::cos, |s| -s.sin(), DomainSpec::ball(v(&[3.0]), 1.0));
        assert!(matches!(
            solve_fixed_point(&fp, &SolverConfig::default()),
            Err(FrontendError::Problem(ProblemError::DomainViolation(_)))
        ));
    }

    #[test]
    fn boundary_condition_examples() {
        let fp = |value: Vec<f64>| {
            let val = Vector::from_vec(value);
            let dim = val.len();
            FixedPointProblem::new(
                dim,
                move |_| val.clone(),
                Jacobian::FiniteDifference { step: 1e-6 },
                DomainSpec::ball(Vector::zeros(dim), 1.0),
            )
        };
        let r = check_boundary_conditions(&fp(vec![0.5]), &[v(&[1.0])], 1e-6).unwrap();
        assert!(r.points[0].cond1 && r.all_points_satisfy_some);

        let r = check_boundary_conditions(&fp(vec![1.5]), &[v(&[1.0])], 1e-6).unwrap();
        let p = &r.points[0];
        assert!(!p.cond1 && !p.cond2 && !p.cond3 && !p.cond4);
        assert!(!r.all_points_satisfy_some);
        assert_eq!(r.max_image_norm, 1.5);

        let r = check_boundary_conditions(&fp(vec![1.0, 0.0]), &[v(&[0.0, 1.0])], 1e-6).unwrap();
        assert!(r.points[0].cond1);

        assert!(matches!(
            check_boundary_conditions(&fp(vec![0.5]), &[v(&[0.5])], 1e-6),
            Err(FrontendError::SampleNotOnBoundary { index: 0, .. })
        ));
    }

    #[test]
    fn inverse_examples() {
        let cfg = SolverConfig::default();
        let s = inverse_map(&cubic(2.0), &cfg).unwrap();
        assert!((s.x[0] - 1.0).abs() < 1e-8);
        assert!(s.residual <= cfg.drift_tol);

        let s = inverse_map(&cubic(0.0), &cfg).unwrap();
        assert_eq!(s.x[0], 0.0);
        assert!(s.trace.states.iter().all(|st| st.x[0] == 0.0));

        let a = Matrix::from_diagonal(&v(&[2.0, 4.0]));
        let aa = a.clone();
        let linear = InverseFunctionProblem::new(
            2,
            move |x| &aa * x,
            Jacobian::analytic(move |_| a.clone()),
            v(&[2.0, 8.0]),
        );
        let s = inverse_map(&linear, &cfg).unwrap();
        assert!((s.x - v(&[1.0, 2.0])).norm() < 1e-12);
    }

    #[test]
    fn inverse_failure_carries_trace() {
        // f(x) = x² has f′(0) = 0: the very first tangent is singular
        let ip = InverseFunctionProblem::new(
            2,
            |x| v(&[x[0] * x[0], x[1]]),
            Jacobian::analytic(|x| Matrix::from_row_slice(2, 2, &[2.0 * x[0], 0.0, 0.0, 1.0])),
            v(&[1.0, 1.0]),
        );
        match inverse_map(&ip, &SolverConfig::default()) {
            Err(FrontendError::SolveFailed { outcome, trace }) => {
                assert!(matches!(
                    *outcome,
                    ContinuationOutcome::SingularJacobian { .. }
                ));
                assert!(!trace.states.is_empty());
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn inverse_is_locally_lipschitz_on_samples() {
        let cfg = SolverConfig::default();
        for k in 0..20 {
            let y = -9.0 + k as f64 * 0.9;
            let a = inverse_map(&cubic(y), &cfg).unwrap().x;
            let b = inverse_map(&cubic(y + 1e-3), &cfg).unwrap().x;
            assert!((a - b).norm() <= 1e-2);
        }
    }
}
