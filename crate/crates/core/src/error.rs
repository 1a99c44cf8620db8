use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: malformed record: {message}")]
    MalformedRecord {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("unknown relation `{relation}` in sample `{sample}`")]
    UnknownRelation { sample: String, relation: String },

    #[error("sample `{sample}`: {message}")]
    Ingestion { sample: String, message: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("input of {got} frames exceeds the configured limit of {limit}")]
    TooManyFrames { got: usize, limit: usize },

    #[error("audio error: {0}")]
    Audio(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint version mismatch: file has {found}, this build reads {expected}")]
    CheckpointVersion { found: String, expected: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("non-finite loss at step {step}; batch sample ids: {ids:?}")]
    NonFiniteLoss { step: u64, ids: Vec<String> },

    #[error("predictions reference unknown sample ids: {0:?}")]
    UnknownSampleIds(Vec<String>),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
