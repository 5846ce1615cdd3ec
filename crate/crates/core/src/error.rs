use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the training pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value or task description is invalid.
    #[error("configuration error: {0}")]
    Config(String),

    /// An operation was called out of order or with mismatched inputs.
    #[error("usage error: {0}")]
    Usage(String),

    /// A computation produced a non-finite value.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// An invariant that should be guaranteed by construction was violated.
    #[error("internal error: {0}")]
    Internal(String),

    #[error("schema version mismatch in {path}: expected {expected}, found {found}")]
    SchemaVersion {
        path: PathBuf,
        expected: u32,
        found: u32,
    },

    #[error("parse error in {path} at line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
