//! Crate-wide error type and process exit-code mapping.

use std::path::PathBuf;
use thiserror::Error;

/// Top-level error for the pipeline. Variants group into three exit classes:
/// usage errors (1), data errors (2) and numeric failures (3).
#[derive(Debug, Error)]
pub enum Error {
    #[error("usage: {0}")]
    Usage(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {message}")]
    Data { path: PathBuf, message: String },

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),

    #[error("{0}: {1}")]
    Io(PathBuf, std::io::Error),
}

impl Error {
    /// Process exit code: 1 usage, 2 data, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Config(_) => 1,
            Error::Data { .. }
            | Error::Dataset(_)
            | Error::Checkpoint(_)
            | Error::Io(..) => 2,
            Error::Numeric(_) | Error::Tensor(_) => 3,
        }
    }

    pub fn data(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Data { path: path.into(), message: message.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
