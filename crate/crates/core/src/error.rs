use thiserror::Error;

/// Faults raised while evaluating a user-supplied map.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("shape violation in {what}: expected {expected}, got {got}")]
    Shape {
        what: &'static str,
        expected: String,
        got: String,
    },
    #[error("non-finite value produced by {what}")]
    NonFinite { what: &'static str },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProblemError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("domain violation: {0}")]
    DomainViolation(String),
    #[error("invalid solver configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RightInverseError {
    #[error("singular jacobian (condition estimate {condition:e})")]
    SingularJacobian { condition: f64 },
    #[error("shape mismatch: matrix is {rows}x{cols}, vector has length {len}")]
    Shape {
        rows: usize,
        cols: usize,
        len: usize,
    },
    #[error("matrix has more rows ({rows}) than columns ({cols}); no right inverse exists")]
    Overdetermined { rows: usize, cols: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FlowError {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("singular jacobian at t = {t} (condition estimate {condition:e})")]
    SingularJacobian { t: f64, condition: f64 },
    #[error("corrector did not converge: residual {residual:e} after {iterations} iterations")]
    CorrectorDivergence { iterations: usize, residual: f64 },
    #[error("corrector iterate left the domain at t = {t}")]
    LeftDomain { t: f64 },
    #[error("invalid starting point: {0}")]
    InvalidStart(String),
    #[error(transparent)]
    Config(#[from] ProblemError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("non-finite evaluation at {0:?}")]
    NonFinite(Vec<f64>),
    #[error("brute-force search supports dimension at most 3, got {0}")]
    DimensionTooLarge(usize),
    #[error("map has more outputs ({outputs}) than inputs ({inputs})")]
    Overdetermined { inputs: usize, outputs: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
