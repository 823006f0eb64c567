use thiserror::Error;

use crate::navigator::NavTrace;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("oracle protocol error: {0}")]
    OracleProtocol(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("corrupt dataset: {0}")]
    CorruptDataset(String),

    #[error("training diverged at iteration {iteration} (last finite iteration {last_finite})")]
    TrainingDiverged { iteration: usize, last_finite: usize },

    #[error("surrogate field is singular: condition number {condition:.3e}")]
    SingularField { condition: f64 },

    #[error("navigation diverged after {} steps", .trace.steps.len().saturating_sub(1))]
    NavigationDiverged { trace: Box<NavTrace> },

    #[error("path deviation undefined: {0}")]
    UndefinedDeviation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn check_dim(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            got,
        })
    }
}
