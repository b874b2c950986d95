//! Composition of the detection pipeline: preprocess, segment, detect.

use crate::config::PipelineConfig;
use crate::error::Result;
use crate::landmarks::{detect_all_landmarks, DetectionFailure, LandmarkSet};
use crate::mesh::TriMesh;
use crate::preprocess::{dimensions, estimate_frame, smooth, VertebraFrame};
use crate::remesh::remesh_with;
use crate::segmentation::{segment, Segmentation};

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    /// Preprocessed mesh carrying the segmentation labels.
    pub mesh: TriMesh,
    pub frame: VertebraFrame,
    pub segmentation: Segmentation,
    pub landmarks: LandmarkSet,
    pub failures: Vec<DetectionFailure>,
}

/// Default remesh target: longitudinal extent / 40, clamped to [0.5, 2.0] mm.
pub fn default_target_edge(mesh: &TriMesh, frame: &VertebraFrame) -> f64 {
    (dimensions(mesh, frame).extent_longitudinal / 40.0).clamp(0.5, 2.0)
}

/// Reorients faces for consistent winding by flood fill over shared edges,
/// then flips globally if the enclosed volume is negative.
pub fn fix_winding(mesh: &TriMesh) -> Result<TriMesh> {
    let mut out = mesh.clone();
    // face adjacency over shared (undirected) edges
    let mut edge_faces: std::collections::BTreeMap<(usize, usize), Vec<usize>> = Default::default();
    for (fi, f) in out.faces.iter().enumerate() {
        for e in 0..3 {
            let (a, b) = (f[e], f[(e + 1) % 3]);
            edge_faces.entry((a.min(b), a.max(b))).or_default().push(fi);
        }
    }
    let has_directed =
        |f: &[usize; 3], a: usize, b: usize| (0..3).any(|e| f[e] == a && f[(e + 1) % 3] == b);
    let mut visited = vec![false; out.faces.len()];
    for seed in 0..out.faces.len() {
        if visited[seed] {
            continue;
        }
        visited[seed] = true;
        let mut queue = std::collections::VecDeque::from([seed]);
        while let Some(fi) = queue.pop_front() {
            let f = out.faces[fi];
            for e in 0..3 {
                let (a, b) = (f[e], f[(e + 1) % 3]);
                for &nf in &edge_faces[&(a.min(b), a.max(b))] {
                    if nf == fi || visited[nf] {
                        continue;
                    }
                    // consistent neighbors traverse the shared edge oppositely
                    if has_directed(&out.faces[nf], a, b) {
                        out.faces[nf].swap(1, 2);
                    }
                    visited[nf] = true;
                    queue.push_back(nf);
                }
            }
        }
    }
    if out.signed_volume() < 0.0 {
        for f in &mut out.faces {
            f.swap(1, 2);
        }
    }
    Ok(out)
}

/// Full per-mesh pipeline. Segmentation failures abort; individual
/// landmark detectors may fail without discarding the other groups.
pub fn run_pipeline(
    mesh: &TriMesh,
    config: &PipelineConfig,
    mesh_id: &str,
) -> Result<PipelineOutput> {
    mesh.validate()?;
    let initial_frame =
        estimate_frame(mesh, config.frame.hint).map_err(|e| e.at_stage("estimate_frame"))?;

    let mut processed = mesh.clone();
    if config.remesh.enabled {
        let target = config
            .remesh
            .target_edge_mm
            .unwrap_or_else(|| default_target_edge(mesh, &initial_frame));
        processed = remesh_with(&processed, target, config.remesh.iterations)
            .map_err(|e| e.at_stage("remesh"))?;
    }
    if config.smooth.iterations > 0 {
        processed = smooth(
            &processed,
            config.smooth.iterations,
            config.smooth.method,
            config.smooth.lambda,
        )
        .map_err(|e| e.at_stage("smooth"))?;
    }

    let frame =
        estimate_frame(&processed, config.frame.hint).map_err(|e| e.at_stage("estimate_frame"))?;
    let seg = segment(&processed, &frame, &config.segmentation)?;
    let (landmarks, failures) = detect_all_landmarks(
        &processed,
        &seg.frame,
        &seg.segmentation,
        &seg.curves,
        &seg.body,
        &config.detect,
        mesh_id,
    );
    let labeled = processed.with_labels(seg.segmentation.label_integers())?;
    Ok(PipelineOutput {
        mesh: labeled,
        frame: seg.frame,
        segmentation: seg.segmentation,
        landmarks,
        failures,
    })
}
