use thiserror::Error;

use crate::solver::InfeasibleReport;

/// Errors produced by every fallible operation in the crate.
#[derive(Debug, Error)]
pub enum WaxError {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("no WAX decomposition found: {0}")]
    Infeasible(InfeasibleReport),

    #[error("no feasible dimension: {0}")]
    NoFeasiblePlan(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("enumeration budget exceeded: {0}")]
    Budget(String),

    #[error("search failed: {0}")]
    SearchFailure(String),

    #[error("numerical routine failed: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = WaxError> = std::result::Result<T, E>;

pub(crate) fn dim_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(WaxError::Dimension(msg.into()))
}
