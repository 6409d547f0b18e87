use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse classification used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Malformed or inconsistent input data, or a violated contract.
    Data,
    /// Filesystem or stream failure.
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("parse error at record {index}: {message}")]
    Parse { index: usize, message: String },

    #[error("timestamp out of order at record {index}: {timestamp} < previous {previous}")]
    Ordering {
        index: usize,
        previous: u64,
        timestamp: u64,
    },

    #[error("event {index} at ({x}, {y}) outside {width}x{height} sensor")]
    Bounds {
        index: usize,
        x: u32,
        y: u32,
        width: u32,
        height: u32,
    },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("degenerate slice interval: {0} events over a zero-length window")]
    DegenerateInterval(usize),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("insufficient support: need at least {required} valid pixels, found {found}")]
    InsufficientSupport { required: usize, found: usize },

    #[error("insufficient input: {0}")]
    InsufficientInput(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("{0}")]
    Format(String),

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("record t_d={t_d}: {source}")]
    Record {
        t_d: u64,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io { .. } => ErrorKind::Io,
            Error::Record { source, .. } => source.kind(),
            _ => ErrorKind::Data,
        }
    }
}
