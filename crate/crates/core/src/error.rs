use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("index out of range: {0}")]
    Range(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("size cap exceeded: {requested} entries requested, cap is {cap}")]
    Size { requested: u128, cap: usize },

    #[error("format error at {location}: {message}")]
    Format { location: String, message: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("non-finite gradient in parameter `{0}`")]
    NonFinite(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("fit error: {0}")]
    Fit(String),

    #[error("incompatible checkpoint: {0}")]
    Compatibility(String),

    #[error("resource error: {0}")]
    Resource(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn format(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            location: location.into(),
            message: message.into(),
        }
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Process exit status: 1 usage, 2 data, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } => 1,
            Error::NonFinite(_) | Error::Numeric(_) | Error::Fit(_) => 3,
            _ => 2,
        }
    }
}
