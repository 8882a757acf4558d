use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Wrong magic or otherwise malformed container.
    #[error("format error: {0}")]
    Format(String),

    #[error("size mismatch: expected {expected} payload bytes, found {found}")]
    SizeMismatch { expected: usize, found: usize },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("coordinate ({x}, {y}) outside {width}x{height} image")]
    OutOfBounds {
        x: i64,
        y: i64,
        width: usize,
        height: usize,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("no detection: {0}")]
    NoDetection(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("no tip found along the detected line")]
    NoTip,

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
}
