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

    #[error("parse error in {location}: {source}")]
    Parse {
        location: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("unsupported schema version {found:?} (expected {expected:?})")]
    SchemaVersion { expected: String, found: String },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid mask: {0}")]
    InvalidMask(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("record {0} has no label; run label assignment first")]
    Unlabeled(String),

    #[error("frame {frame_idx}: {detections} detections exceed slot capacity ({free} free of {slots} slots)")]
    SlotCapacity {
        frame_idx: u32,
        detections: usize,
        free: usize,
        slots: usize,
    },

    #[error("frames out of order: expected frame {expected}, got {found}")]
    NonConsecutiveFrame { expected: u32, found: u32 },

    #[error("unknown video {0:?}")]
    UnknownVideo(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
