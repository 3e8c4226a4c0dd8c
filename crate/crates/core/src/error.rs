use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("training failed: {0}")]
    Training(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("degenerate composition: every token has zero probability")]
    DegenerateComposition,

    #[error("unknown attribute label `{0}`")]
    UnknownLabel(String),

    #[error("text too short: {0}")]
    TextTooShort(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("failed to load {path}: {message}")]
    Load { path: PathBuf, message: String },

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("classifier error: {0}")]
    Classifier(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
