use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt manifest {path}: {message}")]
    CorruptManifest { path: PathBuf, message: String },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("duplicate track id {0}")]
    DuplicateTrackId(u64),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("empty trackset")]
    EmptyTrackSet,
    #[error("invalid track {track_id}: {message}")]
    InvalidTrack { track_id: u64, message: String },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("no must-links available: every track has length 1")]
    NoMustLinks,
    #[error("no cannot-links available")]
    NoCannotLinks,
    #[error("invalid cluster request: {0}")]
    InvalidClustering(String),
    #[error("S-Dbw undefined for k<2")]
    SdbwUndefined,
    #[error("universe mismatch: {left} vs {right} items")]
    UniverseMismatch { left: usize, right: usize },
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("numerical failure at epoch {epoch}, batch {batch}: {message}")]
    Numerical {
        epoch: usize,
        batch: usize,
        message: String,
    },
    #[error("{0}")]
    Usage(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
