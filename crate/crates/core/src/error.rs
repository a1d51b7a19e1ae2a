use thiserror::Error;

use crate::solver::RunTrace;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invariant violated: {0}")]
    InvariantViolation(String),

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("inner solve failed: {0}")]
    InnerSolve(String),

    /// The outer loop stopped early. `trace` holds every completed iteration.
    #[error("solver diverged at iteration {iteration}: {reason}")]
    Diverged { iteration: usize, reason: String, trace: Box<RunTrace> },

    #[error("cannot build pair constraints: {0}")]
    ConstraintConstruction(String),

    #[error("degenerate distance bounds: {0}")]
    Bounds(String),

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Errors caused by bad caller input rather than by the numerics.
    pub fn is_argument_error(&self) -> bool {
        matches!(self, Error::DimensionMismatch(_) | Error::InvalidArgument(_) | Error::Config(_))
    }

    /// Errors raised by the optimization itself (divergence, failed inner
    /// solves, broken manifold invariants).
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Numeric(_) | Error::InnerSolve(_) | Error::Diverged { .. } | Error::InvariantViolation(_))
    }
}

pub(crate) fn check_dim(what: &str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch(format!("{what}: expected {expected}, got {got}")));
    }
    Ok(())
}
