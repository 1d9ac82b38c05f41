use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot access {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("clip `{clip_id}`: invalid field `{field}`: {message}")]
    Schema {
        clip_id: String,
        field: String,
        message: String,
    },

    #[error("clip `{clip_id}`: expected {expected} joints, found {found}")]
    JointCount {
        clip_id: String,
        expected: usize,
        found: usize,
    },

    #[error("invalid topology: {0}")]
    Topology(String),

    #[error("split: {0}")]
    Split(String),

    #[error("clip `{clip_id}`: {message}")]
    Preprocess { clip_id: String, message: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite values in {stage}")]
    NonFinite { stage: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("training aborted: {0}")]
    Training(String),

    #[error("metric undefined: {0}")]
    Metric(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn schema(clip_id: &str, field: &str, message: impl Into<String>) -> Self {
        Error::Schema {
            clip_id: clip_id.to_string(),
            field: field.to_string(),
            message: message.into(),
        }
    }
}
