//! Homotopy continuation in finite dimensions.
//!
//! A zero of `F(0, ·)` is continued to a zero of `F(1, ·)` by integrating the
//! Davidenko flow `ẋ = −S(t,x)·F_t(t,x)`, where `S` is the minimum-norm right
//! inverse of `F_x`. A run ends either at an interior zero at `t = 1` or at a
//! point approaching the domain boundary at some `τ ≤ 1`; numerical breakdowns
//! (singular Jacobian, step underflow, blow-up) are reported as separate
//! outcomes.
//!
//! The [`frontends`] module wraps the flow for fixed-point problems
//! (`F(t,x) = x − t·f(x)`) and for evaluating a global inverse
//! (`F(t,x) = f(x) − (1−t)·f(0) − t·y`).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod domain;
pub mod error;
pub mod flow;
pub mod frontends;
pub mod oracle;
pub mod problem;
pub mod registry;
pub mod right_inverse;

pub use config::SolverConfig;
pub use domain::DomainSpec;
pub use error::{EvalError, FlowError, OracleError, ProblemError, RightInverseError};
pub use flow::{integrate, ContinuationOutcome, Trace, TrajectoryState};
pub use frontends::{inverse_map, solve_fixed_point, FixedPointResult};
pub use problem::{
    make_fixed_point_homotopy, make_inverse_homotopy, validate_problem, FixedPointProblem,
    HomotopyProblem, InverseFunctionProblem,
};
pub use registry::{ProblemRegistryEntry, Registry};

/// Dense real vector; the state space is `ℝⁿ` with the Euclidean norm.
pub type Vector = nalgebra::DVector<f64>;
/// Dense real matrix.
pub type Matrix = nalgebra::DMatrix<f64>;
