//! Crate-wide error type.

use std::path::PathBuf;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shape or dimension contract violation. The message always carries the
    /// offending dimensions so callers can report them verbatim.
    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Config validation collects every bad field before failing.
    #[error("invalid configuration:\n{}", .0.join("\n"))]
    Config(Vec<String>),

    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// A registered parameter reached the optimizer without a gradient.
    #[error("missing gradient for parameter `{0}`")]
    MissingGrad(String),

    #[error("unknown parameter `{0}`")]
    UnknownParam(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Ppm { path: PathBuf, message: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn ppm(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Ppm {
            path: path.into(),
            message: message.into(),
        }
    }
}
