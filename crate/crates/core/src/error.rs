use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("malformed file at byte {offset}: {msg}")]
    Format { offset: usize, msg: String },

    #[error("unsupported PNG variant: {0}")]
    UnsupportedPng(String),

    #[error("mesh lacks UVs")]
    MissingUvs,

    #[error("degenerate mesh")]
    DegenerateMesh,

    #[error("empty UV atlas")]
    EmptyAtlas,

    #[error("no foreground to sample")]
    NoForeground,

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("view {view_id}: {msg}")]
    Provider { view_id: u32, msg: String },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn dims(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }
}
