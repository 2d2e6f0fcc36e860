use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the canopy pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A numeric or structural parameter violated its contract.
    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    /// Malformed cloud file. `location` names a line or byte offset.
    #[error("parse error in {path} at {location}: {reason}")]
    Parse {
        path: String,
        location: String,
        reason: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("plane fit failed: {0}")]
    Fit(String),

    /// Input too small or flat to span a volume.
    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    #[error("mesh topology error: {0}")]
    Topology(String),

    #[error("segmentation failed for cluster {cluster}: {reason}")]
    Segmentation { cluster: usize, reason: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("serialization error: {0}")]
    Serialize(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::Parameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
