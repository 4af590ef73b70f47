use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by every fallible operation in the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid geometry or hyperparameters, including shape mismatches between layers.
    #[error("configuration error: {0}")]
    Config(String),

    /// An operation was invoked outside its contract (bad label, missing forward state, ...).
    #[error("usage error: {0}")]
    Usage(String),

    /// A NaN or infinity appeared in a tensor.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// A weights file was written for a different architecture.
    #[error("geometry mismatch: file holds [{found}], expected [{expected}]")]
    Geometry { expected: String, found: String },

    /// Malformed binary weights file.
    #[error("weights format error: {0}")]
    Format(String),

    /// Malformed text input (annotation JSON, proposal JSON, config files).
    #[error("parse error in {location}: {message}")]
    Parse { location: String, message: String },

    /// Training or evaluation data cannot satisfy a request.
    #[error("data error: {0}")]
    Data(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {message}")]
    Image { path: PathBuf, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.into(),
        }
    }
}
