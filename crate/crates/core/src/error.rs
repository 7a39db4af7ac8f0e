//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CbpError {
    /// Shape or horizon mismatch between two values that must agree.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// An argument violated a precondition.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A quantity left its numeric domain (non-finite density, covariance
    /// below the floor, ...).
    #[error("numeric domain error: {0}")]
    Numeric(String),

    /// Invalid configuration; `field` names the offending key.
    #[error("configuration error: {field}: {message}")]
    Config { field: String, message: String },

    #[error("unknown agent id {0}")]
    UnknownAgent(u32),

    /// Training produced a non-finite loss.
    #[error("training diverged at batch {batch}: {message}")]
    Training { batch: usize, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl CbpError {
    pub fn config(field: &str, message: impl Into<String>) -> Self {
        CbpError::Config {
            field: field.to_string(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, CbpError>;
