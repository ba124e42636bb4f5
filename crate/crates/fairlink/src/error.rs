//! Error types shared across the crate.

use thiserror::Error;

/// Errors produced by graph loading, validation, training and evaluation.
#[derive(Debug, Error)]
pub enum Error {
    /// A file could not be read or written.
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// A line of an input file could not be parsed.
    #[error("parse error in {path} line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    /// Structurally invalid input (bad indices, self-loops, non-finite values, bad config).
    #[error("validation error: {0}")]
    Validation(String),

    /// A runtime failure such as divergence during training.
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn validation(message: impl Into<String>) -> Self {
        Error::Validation(message.into())
    }

    pub(crate) fn runtime(message: impl Into<String>) -> Self {
        Error::Runtime(message.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
