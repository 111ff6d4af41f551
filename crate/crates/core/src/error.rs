use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the pipeline stages.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    /// The input data is unusable (missing column, non-numeric cell, too few samples...).
    #[error("data error: {0}")]
    Data(String),

    /// A caller passed an argument outside the operation's domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("schema mismatch: {0}")]
    Schema(String),

    /// An artifact was produced by a different format version or from different upstream inputs.
    #[error("artifact mismatch: {0}")]
    Artifact(String),

    #[error("fitness evaluation failed for particle {particle}: {message}")]
    Fitness { particle: usize, message: String },

    #[error("training failed: {0}")]
    Training(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True when the failure is caused by the input data rather than by the program.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Io { .. } | Error::Csv(_) | Error::Data(_) | Error::Schema(_) | Error::Artifact(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
