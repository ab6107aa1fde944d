use thiserror::Error;

/// Errors surfaced by the solvers and metrics.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid operator: {0}")]
    InvalidOperator(String),

    #[error("operator is not monotone: {0}")]
    NonMonotone(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("inner solver did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    /// The point lies (numerically) in the zero set of the operator, where the
    /// feedback law is undefined.
    #[error("point is numerically stationary (residue {residue:e})")]
    Stationary { residue: f64 },

    #[error("bracket overflow after {0} expansions")]
    BracketOverflow(usize),

    #[error("gap is undefined on an unbounded domain")]
    DomainUnbounded,

    #[error("point lies outside the operator domain")]
    OutsideDomain,

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("solution set is unknown for this problem")]
    UnknownSolution,

    #[error("need at least {needed} positive points, got {got}")]
    InsufficientPoints { needed: usize, got: usize },

    #[error("trajectory is empty")]
    EmptyTrajectory,

    #[error("algebraic equation residual {residual:e} exceeds tolerance at t = {t}")]
    AlgebraicResidual { t: f64, residual: f64 },

    #[error("oracle failed at iteration {k}: {reason}")]
    OracleFailed { k: usize, reason: Box<Error> },

    #[error("oracle step at iteration {k} violates the framework certificate")]
    CertViolated { k: usize },

    #[error("Taylor surrogate is not monotone: {0}")]
    SurrogateNonmonotone(String),

    #[error("surrogate certificate {needed:e} is below the rounding level {rounding:e} of the residual")]
    PrecisionFloor { needed: f64, rounding: f64 },

    #[error("large-step window unreachable; last bracket [{lo:e}, {hi:e}]")]
    WindowUnreachable { lo: f64, hi: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
