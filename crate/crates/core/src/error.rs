use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library. Each variant corresponds to one failure
/// class so callers (and the CLI) can report them without string matching.
#[derive(Debug, Error)]
pub enum FaqError {
    #[error("value {value} out of range for {bitwidth}-bit two's complement")]
    Range { value: i64, bitwidth: u32 },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("index error: {0}")]
    Index(String),

    #[error("capacity error: {0}")]
    Capacity(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("unsupported kind: {0}")]
    Kind(String),

    #[error("format error at {location}: {message}")]
    Format { location: String, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl FaqError {
    pub(crate) fn format(location: impl Into<String>, message: impl Into<String>) -> Self {
        FaqError::Format {
            location: location.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FaqError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = FaqError> = std::result::Result<T, E>;
