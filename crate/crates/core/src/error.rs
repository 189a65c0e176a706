use thiserror::Error;

/// Errors raised anywhere in the laboratory.
#[derive(Debug, Error)]
pub enum LabError {
    /// A documented precondition was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("support too large: {size} responses exceeds cap {cap}")]
    SupportTooLarge { size: u128, cap: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// A training run hit a non-finite loss or gradient.
    #[error("run aborted at iteration {iteration}, epoch {epoch}, batch {batch}: {reason}")]
    Aborted {
        iteration: usize,
        epoch: usize,
        batch: usize,
        reason: String,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("unsupported format_version {found} (expected {expected})")]
    Version { found: u64, expected: u64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, LabError>;

pub(crate) fn contract(msg: impl Into<String>) -> LabError {
    LabError::Contract(msg.into())
}
