use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("integrity check failed: {0}")]
    Integrity(String),

    #[error("backward called on a value that does not depend on any tracked tensor")]
    Untracked,

    #[error("noise condition violated: {0}")]
    ConditionViolated(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<hound::Error> for Error {
    fn from(e: hound::Error) -> Self {
        match e {
            hound::Error::IoError(source) => Error::Io {
                path: PathBuf::new(),
                source,
            },
            hound::Error::FormatError(detail) => Error::Format {
                what: "wav file",
                detail: detail.to_string(),
            },
            hound::Error::Unsupported => Error::Unsupported("wav encoding".into()),
            other => Error::Format {
                what: "wav file",
                detail: other.to_string(),
            },
        }
    }
}
