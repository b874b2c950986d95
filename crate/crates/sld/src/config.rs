//! Pipeline configuration: TOML file with strict unknown-key rejection,
//! plus a stable hash of the effective settings for run manifests.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, SldError};
use crate::evaluation::SpineRegion;
use crate::landmarks::DetectionConfig;
use crate::preprocess::{FrameHint, SmoothMethod};
use crate::segmentation::SegmentationConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RemeshSettings {
    pub enabled: bool,
    /// Target edge length in mm; None derives it from the longitudinal
    /// extent (extent / 40, clamped to [0.5, 2.0]).
    pub target_edge_mm: Option<f64>,
    pub iterations: usize,
}

impl Default for RemeshSettings {
    fn default() -> Self {
        RemeshSettings {
            enabled: true,
            target_edge_mm: None,
            iterations: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SmoothSettings {
    pub method: SmoothMethod,
    pub iterations: usize,
    pub lambda: f64,
}

impl Default for SmoothSettings {
    fn default() -> Self {
        SmoothSettings {
            method: SmoothMethod::Taubin,
            iterations: 10,
            lambda: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct FrameSettings {
    pub hint: FrameHint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub remesh: RemeshSettings,
    pub smooth: SmoothSettings,
    pub frame: FrameSettings,
    pub segmentation: SegmentationConfig,
    pub detect: DetectionConfig,
    /// Mesh id (file stem) to spine region, for evaluation rows.
    pub regions: BTreeMap<String, SpineRegion>,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<PipelineConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| SldError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let config: PipelineConfig = toml::from_str(&text)
            .map_err(|e| SldError::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(target) = self.remesh.target_edge_mm {
            if target < 1e-3 {
                return Err(SldError::Config(format!(
                    "remesh.target_edge_mm must be at least 1e-3, got {target}"
                )));
            }
        }
        if !(self.smooth.lambda > 0.0 && self.smooth.lambda <= 1.0) {
            return Err(SldError::Config(format!(
                "smooth.lambda must be in (0, 1], got {}",
                self.smooth.lambda
            )));
        }
        self.detect.validate()?;
        Ok(())
    }

    /// Stable digest of the effective settings; changes iff any setting
    /// changes.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        format!("{digest:x}")
    }

    pub fn region_for(&self, mesh_id: &str) -> Option<SpineRegion> {
        self.regions.get(mesh_id).copied()
    }
}
