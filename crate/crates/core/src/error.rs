use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated a documented precondition (shape, range, count).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// An operation was called in the wrong lifecycle state.
    #[error("invalid state: {0}")]
    State(String),

    /// A gradient or loss that must be finite was not.
    #[error("non-finite value in {context} at parameter index {index}")]
    NonFinite { context: String, index: usize },

    /// Structured input could not be decoded.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Binary snapshot could not be decoded.
    #[error("malformed snapshot: {0}")]
    Snapshot(String),

    /// Config key had a bad value or was unknown.
    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn state(msg: impl Into<String>) -> Self {
        Error::State(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
