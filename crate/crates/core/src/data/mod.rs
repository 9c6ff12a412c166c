//! Video containers, label manifests, synthetic data, and evaluation metrics.

mod manifest;
mod metrics;
mod packed;
mod synth;

use std::path::Path;

pub use manifest::{format_manifest, load_dataset, parse_manifest, read_manifest, ManifestEntry};
pub use metrics::{evaluate, LevelError, Metrics};
pub use packed::{
    read_packed, read_packed_file, write_packed, write_packed_file, PackedVideo, CHANNELS,
    PACKED_MAGIC, PACKED_VERSION,
};
pub use synth::synth_dataset;

use crate::numerics::NumericsError;

/// The four engagement intensity levels.
pub const LEVELS: [f64; 4] = [0.0, 0.33, 0.66, 1.0];

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledVideo {
    pub video: PackedVideo,
    /// Engagement intensity in `[0, 1]`.
    pub label: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

impl DataError {
    pub(crate) fn at_path(path: &Path, source: std::io::Error) -> Self {
        DataError::File {
            path: path.display().to_string(),
            source,
        }
    }
}
