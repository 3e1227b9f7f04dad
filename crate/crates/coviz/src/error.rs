use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] coviz_core::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: malformed JSON: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path}: malformed configuration: {message}")]
    ConfigFile { path: PathBuf, message: String },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("{0}")]
    Store(String),
    #[error("not found: {0}")]
    NotFound(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

/// Checkpoint loading failures, kept distinct so callers can tell a missing
/// file from a corrupt or incompatible one.
#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint not found: {0}")]
    Missing(PathBuf),
    #[error("malformed checkpoint {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },
    #[error("checkpoint {path} has format version {found}, expected {expected}")]
    VersionMismatch { path: PathBuf, found: u64, expected: u64 },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}
