use thiserror::Error;

/// Errors raised by the estimation pipeline and its file formats.
#[derive(Debug, Error)]
pub enum MrfaError {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("domain mismatch: {0}")]
    Domain(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("rank {rank} is not below sqrt(L) for L = {len}; the phase system is under-determined")]
    Underdetermined { rank: usize, len: usize },

    #[error("iterative solver did not converge: {0}")]
    Convergence(String),

    #[error("alignment error is undefined for a zero reference matrix")]
    UndefinedMetric,

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, MrfaError>;
