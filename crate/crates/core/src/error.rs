use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the ranking pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Shapes, dimensions or hyperparameters that cannot work together.
    #[error("configuration error: {0}")]
    Config(String),

    /// Input data that violates a documented invariant (empty query, bad grade, ...).
    #[error("data error: {0}")]
    Data(String),

    /// A convolution received fewer rows than its window.
    #[error("input too short: {len} rows for a window of {window}")]
    InputTooShort { len: usize, window: usize },

    /// A line-oriented file could not be parsed.
    #[error("{path}:{line}: {message}")]
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

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
