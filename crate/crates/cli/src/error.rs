use std::path::PathBuf;

use aer_core::AerError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("unknown config key `{0}`")]
    UnknownKey(String),

    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: metric key `{key}` missing", path.display())]
    MissingMetric { path: PathBuf, key: String },

    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] AerError),
}

pub type Result<T> = std::result::Result<T, CliError>;

/// Attaches `path` to an I/O error.
pub fn io_at<T>(path: &std::path::Path, r: std::io::Result<T>) -> Result<T> {
    r.map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}
