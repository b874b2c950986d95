//! Error types shared across the pipeline.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, SldError>;

#[derive(Debug, Error)]
pub enum SldError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path} at byte {offset}: {message}")]
    Parse {
        path: String,
        offset: u64,
        message: String,
    },

    #[error("mesh validation failed: {0}")]
    Validation(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("singular geometry: {0}")]
    SingularGeometry(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("no path between vertices {src} and {dst} (disconnected)")]
    NoPath { src: usize, dst: usize },

    #[error("segmentation failed: {0}")]
    SegmentationFailure(String),

    #[error("landmark detection failed: {0}")]
    DetectionFailure(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<SldError>,
    },
}

impl SldError {
    pub fn at_stage(self, stage: &'static str) -> Self {
        SldError::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Innermost stage annotation, if any.
    pub fn stage(&self) -> Option<&'static str> {
        match self {
            SldError::Stage { stage, .. } => Some(stage),
            _ => None,
        }
    }
}
