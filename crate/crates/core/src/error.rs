use thiserror::Error;

use crate::oracle::OracleError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A file did not parse under its declared format.
    #[error("{path}: {context}: {message}")]
    Parse {
        path: String,
        context: String,
        message: String,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("item `{id}` has non-positive target {value}")]
    NonPositiveTarget { id: String, value: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error(transparent)]
    Oracle(#[from] OracleError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(
        path: impl Into<String>,
        context: impl Into<String>,
        message: impl std::fmt::Display,
    ) -> Self {
        Error::Parse {
            path: path.into(),
            context: context.into(),
            message: message.to_string(),
        }
    }
}
