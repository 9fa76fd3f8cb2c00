use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the selection pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid selection: {0}")]
    InvalidSelection(String),
    #[error("unknown device id {id} (pool has {pool_size} devices)")]
    UnknownDevice { id: usize, pool_size: usize },
    #[error("numeric domain error: {0}")]
    Numeric(String),
    #[error("infeasible request: {0}")]
    Infeasible(String),
    #[error("empty shard for client {0}")]
    EmptyShard(usize),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("stale artifact {path}: produced by config {found}, expected {expected}")]
    StaleArtifact {
        path: PathBuf,
        found: String,
        expected: String,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::Infeasible(_) => ErrorKind::Config,
            Error::Numeric(_) => ErrorKind::Numeric,
            _ => ErrorKind::Data,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
