use std::io;

/// Errors raised by the training laboratory.
#[derive(Debug, thiserror::Error)]
pub enum AerError {
    /// Inconsistent shapes, unsupported tiers, bad hyperparameters.
    #[error("configuration error: {0}")]
    Config(String),
    /// Malformed or missing data (empty batches, missing log-probs, bad entropy values).
    #[error("data error: {0}")]
    Data(String),
    /// A caller broke an operation's preconditions.
    #[error("contract violation: {0}")]
    Contract(String),
    /// Training produced a NaN or infinite loss or gradient.
    #[error("non-finite {what} at iteration {iteration}")]
    NonFinite { what: &'static str, iteration: usize },
    /// Checkpoint or parameter file could not be decoded.
    #[error("format error: {0}")]
    Format(String),
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, AerError>;
