//! Crate-wide error type.

use std::path::PathBuf;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, DrdgError>;

#[derive(Debug, Error)]
pub enum DrdgError {
    /// Invalid user-supplied configuration (sizes, counts, names).
    #[error("configuration error: {0}")]
    Config(String),

    /// A typed API contract was violated (shape mismatch, unknown parameter set, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Training hit a non-finite loss and aborted.
    #[error("non-finite loss at step {step} ({step_type}): {diagnostic}")]
    NonFinite {
        step: u64,
        step_type: String,
        diagnostic: String,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl DrdgError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DrdgError::Io {
            path: path.into(),
            source,
        }
    }
}
