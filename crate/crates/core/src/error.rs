use std::path::PathBuf;

use thiserror::Error;

use crate::lm::ModelParams;

/// Errors produced anywhere in the detection pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("io error on {path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("unknown term `{0}`")]
    UnknownTerm(String),

    #[error("nothing to train")]
    NothingToTrain,

    #[error("undefined similarity: zero vector")]
    ZeroVector,

    #[error("insufficient data: {0}")]
    Insufficient(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("sequence of length {len} exceeds max_len {max_len}")]
    TooLong { len: usize, max_len: usize },

    #[error("non-finite loss")]
    NonFiniteLoss,

    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Diverged {
        epoch: usize,
        last_good: Box<ModelParams>,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("generation provider failed after {attempts} attempt(s): {message}")]
    Provider { attempts: usize, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }
}
