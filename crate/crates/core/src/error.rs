use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the planning, learning and evaluation code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The planning request itself is malformed (endpoint in collision or
    /// out of bounds). Distinct from a planner that simply found no path.
    #[error("invalid planning request: {0}")]
    InvalidRequest(String),

    #[error("capacity exceeded: {count} obstacles but only {capacity} slots")]
    Capacity { count: usize, capacity: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("problem generation failed for world `{world}`: {reason}")]
    Generation { world: String, reason: String },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("refusing to train on an empty training set")]
    EmptyTrainingSet,

    #[error("every candidate is in collision")]
    SelectionFailure,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("model checkpoint missing or unreadable: {0}")]
    ModelMissing(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
