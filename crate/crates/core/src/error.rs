use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("vocabulary is empty after filtering (min_count = {min_count})")]
    EmptyVocabulary { min_count: usize },

    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("degenerate row for word {word:?}: norm {norm:e}")]
    DegenerateRow { word: String, norm: f64 },

    #[error("numeric divergence: {0}")]
    NumericDivergence(String),

    #[error("unknown word {0:?}")]
    UnknownWord(String),

    #[error("split error: {0}")]
    Split(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

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
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// Process exit code for this error: 1 usage/config, 2 data/format, 3 numeric divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidConfig(_) | Error::Usage(_) | Error::Shape(_) => 1,
            Error::NumericDivergence(_) => 3,
            _ => 2,
        }
    }
}
