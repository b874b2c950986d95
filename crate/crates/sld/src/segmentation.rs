//! Skeletonization-based semantic segmentation of a vertebra into body,
//! lamina, spinous process, transverse processes, and articular processes.
//!
//! Stages: split body from arch at the pedicle isthmus (cross-sectional
//! area profile), find one geometric extreme seed per process, grow initial
//! clusters, fit a slab-centroid skeleton curve per process, then classify
//! every arch vertex by distance to the nearest curve (lamina is the
//! fallback for vertices outside every capture radius).

use std::collections::BTreeMap;

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SldError};
use crate::mesh::geodesic;
use crate::mesh::{Polyline, TriMesh};
use crate::preprocess::{dimensions, VertebraFrame};

/// Anatomical region labels with stable integer serialization 0-8.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SegmentLabel {
    Body,
    Lamina,
    SpinousProcess,
    TransverseL,
    TransverseR,
    ArticularSupL,
    ArticularSupR,
    ArticularInfL,
    ArticularInfR,
}

impl SegmentLabel {
    pub const ALL: [SegmentLabel; 9] = [
        SegmentLabel::Body,
        SegmentLabel::Lamina,
        SegmentLabel::SpinousProcess,
        SegmentLabel::TransverseL,
        SegmentLabel::TransverseR,
        SegmentLabel::ArticularSupL,
        SegmentLabel::ArticularSupR,
        SegmentLabel::ArticularInfL,
        SegmentLabel::ArticularInfR,
    ];

    /// The seven labels carrying a skeleton curve (lamina is the fallback).
    pub const PROCESSES: [SegmentLabel; 7] = [
        SegmentLabel::SpinousProcess,
        SegmentLabel::TransverseL,
        SegmentLabel::TransverseR,
        SegmentLabel::ArticularSupL,
        SegmentLabel::ArticularSupR,
        SegmentLabel::ArticularInfL,
        SegmentLabel::ArticularInfR,
    ];

    pub fn to_i32(self) -> i32 {
        SegmentLabel::ALL.iter().position(|&l| l == self).unwrap() as i32
    }

    pub fn from_i32(v: i32) -> Option<SegmentLabel> {
        SegmentLabel::ALL.get(usize::try_from(v).ok()?).copied()
    }

    /// Swap left and right labels; others map to themselves.
    pub fn mirrored(self) -> SegmentLabel {
        match self {
            SegmentLabel::TransverseL => SegmentLabel::TransverseR,
            SegmentLabel::TransverseR => SegmentLabel::TransverseL,
            SegmentLabel::ArticularSupL => SegmentLabel::ArticularSupR,
            SegmentLabel::ArticularSupR => SegmentLabel::ArticularSupL,
            SegmentLabel::ArticularInfL => SegmentLabel::ArticularInfR,
            SegmentLabel::ArticularInfR => SegmentLabel::ArticularInfL,
            other => other,
        }
    }
}

/// Per-vertex label map; a total partition of the mesh vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    pub labels: Vec<SegmentLabel>,
    pub vertex_count: usize,
}

impl Segmentation {
    pub fn vertices_with(&self, label: SegmentLabel) -> Vec<usize> {
        (0..self.labels.len())
            .filter(|&v| self.labels[v] == label)
            .collect()
    }

    pub fn label_integers(&self) -> Vec<i32> {
        self.labels.iter().map(|l| l.to_i32()).collect()
    }

    /// Faces whose three vertices all carry `label`.
    pub fn faces_with(&self, mesh: &TriMesh, label: SegmentLabel) -> Vec<usize> {
        (0..mesh.faces.len())
            .filter(|&fi| mesh.faces[fi].iter().all(|&v| self.labels[v] == label))
            .collect()
    }
}

/// Ordered centerline polyline abstracting a process's shape, root first.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonCurve {
    pub points: Vec<Point3<f64>>,
    pub label: SegmentLabel,
}

impl SkeletonCurve {
    pub fn polyline(&self) -> Polyline {
        Polyline {
            points: self.points.clone(),
        }
    }

    pub fn tip(&self) -> Point3<f64> {
        *self.points.last().unwrap()
    }

    pub fn root(&self) -> Point3<f64> {
        self.points[0]
    }
}

/// Seed vertex and extremity direction per process, from extreme clustering.
#[derive(Debug, Clone)]
pub struct ExtremePoints {
    pub seeds: BTreeMap<SegmentLabel, (usize, Vector3<f64>)>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SegmentationConfig {
    /// Slab count for skeleton curves.
    pub skeleton_bins: usize,
    /// Capture radius multiplier on the median cluster-to-curve distance.
    pub capture_scale: f64,
    /// Stations for the body/arch cross-sectional area profile.
    pub profile_stations: usize,
    /// Fraction of the AP extent excluded (posterior) when seeking
    /// transverse tips, so the spinous tip cannot win laterally.
    pub spinous_cutoff_fraction: f64,
    /// Para-sagittal band for articular seeds, as fractions of the LR extent.
    pub articular_band: [f64; 2],
    /// Minimum lateral seed offset, as a fraction of the LR extent.
    pub min_lateral_offset_scale: f64,
    /// Minimum spinous protrusion behind the body/arch split, as a fraction
    /// of the longitudinal extent.
    pub min_spinous_protrusion_scale: f64,
    /// Minimum articular seed offset from the arch centroid along the
    /// longitudinal axis, as a fraction of the longitudinal extent.
    pub min_articular_offset_scale: f64,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        SegmentationConfig {
            skeleton_bins: 10,
            capture_scale: 1.5,
            profile_stations: 40,
            spinous_cutoff_fraction: 0.2,
            articular_band: [0.15, 0.45],
            min_lateral_offset_scale: 0.45,
            min_spinous_protrusion_scale: 0.9,
            min_articular_offset_scale: 0.25,
        }
    }
}

/// Distances are quantized to this grid before comparisons so that label
/// assignment is stable under last-ulp perturbations (mirror runs).
const DISTANCE_QUANTUM: f64 = 1e-9;

fn quantize(d: f64) -> f64 {
    (d / DISTANCE_QUANTUM).round() * DISTANCE_QUANTUM
}

/// Splits vertices into vertebral body and vertebral arch at the pedicle
/// isthmus: the interior minimum of the cross-sectional area profile swept
/// along the anterior-posterior axis.
pub fn split_body_arch(mesh: &TriMesh, frame: &VertebraFrame) -> Result<(Vec<usize>, Vec<usize>)> {
    split_body_arch_with(mesh, frame, &SegmentationConfig::default())
}

pub fn split_body_arch_with(
    mesh: &TriMesh,
    frame: &VertebraFrame,
    config: &SegmentationConfig,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let stations = config.profile_stations.max(8);
    // anterior coordinate: larger = more anterior
    let coord: Vec<f64> = mesh
        .vertices
        .iter()
        .map(|p| p.coords.dot(&frame.anterior))
        .collect();
    let lo = coord.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = coord.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo < 1e-9 {
        return Err(SldError::SegmentationFailure("flat AP extent".into()));
    }
    let all_faces: Vec<usize> = (0..mesh.faces.len()).collect();
    let mut profile = Vec::with_capacity(stations);
    for s in 0..stations {
        let t = (s as f64 + 0.5) / stations as f64;
        let station = lo + (hi - lo) * t;
        let plane = crate::mesh::Plane {
            point: Point3::from(frame.anterior * station),
            normal: frame.anterior,
        };
        let curves = crate::mesh::section::plane_intersection_curve(mesh, &all_faces, &plane)?;
        let area: f64 = curves.iter().map(|c| section_area(c, frame)).sum();
        profile.push(area);
    }
    // light smoothing to suppress station noise
    let smoothed: Vec<f64> = (0..stations)
        .map(|i| {
            let a = profile[i.saturating_sub(1)];
            let b = profile[i];
            let c = profile[(i + 1).min(stations - 1)];
            (a + b + c) / 3.0
        })
        .collect();

    let split_station = find_isthmus(&smoothed).ok_or_else(|| {
        SldError::SegmentationFailure(
            "no pedicle isthmus: cross-sectional area profile has no interior minimum".into(),
        )
    })?;
    let split_coord = lo + (hi - lo) * (split_station as f64 + 0.5) / stations as f64;

    // body: largest connected component on the anterior side
    let anterior_set: Vec<usize> = (0..mesh.vertices.len())
        .filter(|&v| coord[v] > split_coord)
        .collect();
    if anterior_set.is_empty() {
        return Err(SldError::SegmentationFailure(
            "empty anterior side at isthmus".into(),
        ));
    }
    let components = mesh.connected_components(&anterior_set);
    let body = components[0].clone();
    let mut in_body = vec![false; mesh.vertices.len()];
    for &v in &body {
        in_body[v] = true;
    }
    let arch: Vec<usize> = (0..mesh.vertices.len()).filter(|&v| !in_body[v]).collect();
    if arch.is_empty() {
        return Err(SldError::SegmentationFailure("empty arch".into()));
    }
    Ok((body, arch))
}

/// Enclosed area of a section polyline, by the shoelace formula in the
/// section plane; open polylines contribute their hull-less closure.
fn section_area(curve: &Polyline, frame: &VertebraFrame) -> f64 {
    let e1 = frame.left;
    let e2 = frame.longitudinal;
    let origin = curve.points[0];
    let uv: Vec<(f64, f64)> = curve
        .points
        .iter()
        .map(|p| ((p - origin).dot(&e1), (p - origin).dot(&e2)))
        .collect();
    let mut twice_area = 0.0;
    for i in 0..uv.len() {
        let j = (i + 1) % uv.len();
        twice_area += uv[i].0 * uv[j].1 - uv[j].0 * uv[i].1;
    }
    twice_area.abs() * 0.5
}

/// Interior minimum between the two most massive peaks, or None when the
/// profile is effectively single-peaked (ellipsoid-like input).
fn find_isthmus(profile: &[f64]) -> Option<usize> {
    let n = profile.len();
    let peak = (0..n).max_by(|&a, &b| profile[a].partial_cmp(&profile[b]).unwrap())?;
    let max_area = profile[peak];
    // best valley on each side of the main peak, paired with its far peak
    let mut best: Option<(usize, f64)> = None; // (valley index, score)
    for (range, _forward) in [(0..peak, false), (peak + 1..n, true)] {
        let side: Vec<usize> = range.collect();
        if side.len() < 2 {
            continue;
        }
        for &v in &side {
            // far peak: max beyond the valley, away from the main peak
            let far: Vec<usize> = side
                .iter()
                .copied()
                .filter(|&i| if v < peak { i < v } else { i > v })
                .collect();
            if far.is_empty() {
                continue;
            }
            let far_peak = far
                .iter()
                .copied()
                .map(|i| profile[i])
                .fold(f64::NEG_INFINITY, f64::max);
            let valley = profile[v];
            // genuine isthmus: valley clearly below both masses
            if far_peak > 0.15 * max_area && valley < 0.7 * far_peak && valley < 0.7 * max_area {
                let score = far_peak.min(max_area) - valley;
                if best.is_none_or(|(_, s)| score > s) {
                    best = Some((v, score));
                }
            }
        }
    }
    best.map(|(v, _)| v)
}

/// Seven extreme seeds: spinous tip (posterior), transverse tips (lateral),
/// and the four articular tips (longitudinal extremes inside the
/// para-sagittal pedicle bands).
pub fn cluster_extremes(
    mesh: &TriMesh,
    arch: &[usize],
    frame: &VertebraFrame,
    config: &SegmentationConfig,
) -> Result<ExtremePoints> {
    if arch.is_empty() {
        return Err(SldError::SegmentationFailure("empty arch".into()));
    }
    let dims = dimensions(mesh, frame);
    let arch_centroid = {
        let sum: Vector3<f64> = arch.iter().map(|&v| mesh.vertices[v].coords).sum();
        Point3::from(sum / arch.len() as f64)
    };
    let ap = |v: usize| mesh.vertices[v].coords.dot(&frame.anterior);
    let lr = |v: usize| (mesh.vertices[v] - arch_centroid).dot(&frame.left);
    let lg = |v: usize| (mesh.vertices[v] - arch_centroid).dot(&frame.longitudinal);

    let mut seeds: BTreeMap<SegmentLabel, (usize, Vector3<f64>)> = BTreeMap::new();

    // spinous tip: most posterior arch vertex, must protrude well behind the arch mass
    let spinous = *arch
        .iter()
        .min_by(|&&a, &&b| ap(a).partial_cmp(&ap(b)).unwrap())
        .unwrap();
    let arch_ap_max = arch
        .iter()
        .map(|&v| ap(v))
        .fold(f64::NEG_INFINITY, f64::max);
    let protrusion = arch_ap_max - ap(spinous);
    if protrusion < config.min_spinous_protrusion_scale * dims.extent_longitudinal {
        return Err(SldError::SegmentationFailure(format!(
            "missing SpinousProcess: posterior protrusion {protrusion:.1} mm below threshold"
        )));
    }
    seeds.insert(SegmentLabel::SpinousProcess, (spinous, -frame.anterior));

    // transverse tips: lateral extremes outside the posterior spinous zone
    let ap_lo = mesh
        .vertices
        .iter()
        .map(|p| p.coords.dot(&frame.anterior))
        .fold(f64::INFINITY, f64::min);
    let spinous_cutoff = ap_lo + config.spinous_cutoff_fraction * dims.extent_anterior_posterior;
    let lateral_pool: Vec<usize> = arch
        .iter()
        .copied()
        .filter(|&v| ap(v) > spinous_cutoff)
        .collect();
    for (label, sign) in [
        (SegmentLabel::TransverseL, 1.0),
        (SegmentLabel::TransverseR, -1.0),
    ] {
        let tip = lateral_pool
            .iter()
            .copied()
            .max_by(|&a, &b| (sign * lr(a)).partial_cmp(&(sign * lr(b))).unwrap());
        let tip = tip.ok_or_else(|| {
            SldError::SegmentationFailure(format!("missing {label:?}: empty lateral pool"))
        })?;
        let offset = sign * lr(tip);
        if offset < config.min_lateral_offset_scale * dims.extent_left_right {
            return Err(SldError::SegmentationFailure(format!(
                "missing {label:?}: lateral offset {offset:.1} mm below threshold"
            )));
        }
        seeds.insert(label, (tip, frame.left * sign));
    }

    // articular tips: longitudinal extremes inside the para-sagittal bands
    let band_lo = config.articular_band[0] * dims.extent_left_right;
    let band_hi = config.articular_band[1] * dims.extent_left_right;
    for (label, side, updown) in [
        (SegmentLabel::ArticularSupL, 1.0, 1.0),
        (SegmentLabel::ArticularSupR, -1.0, 1.0),
        (SegmentLabel::ArticularInfL, 1.0, -1.0),
        (SegmentLabel::ArticularInfR, -1.0, -1.0),
    ] {
        let band: Vec<usize> = arch
            .iter()
            .copied()
            .filter(|&v| {
                let o = side * lr(v);
                o >= band_lo && o <= band_hi
            })
            .collect();
        let tip = band
            .iter()
            .copied()
            .max_by(|&a, &b| (updown * lg(a)).partial_cmp(&(updown * lg(b))).unwrap())
            .ok_or_else(|| {
                SldError::SegmentationFailure(format!("missing {label:?}: empty pedicle band"))
            })?;
        let offset = updown * lg(tip);
        if offset < config.min_articular_offset_scale * dims.extent_longitudinal {
            return Err(SldError::SegmentationFailure(format!(
                "missing {label:?}: longitudinal offset {offset:.1} mm below threshold"
            )));
        }
        seeds.insert(label, (tip, frame.longitudinal * updown));
    }

    // seeds must be distinct vertices
    let mut vertices: Vec<usize> = seeds.values().map(|&(v, _)| v).collect();
    vertices.sort_unstable();
    vertices.dedup();
    if vertices.len() != seeds.len() {
        return Err(SldError::SegmentationFailure(
            "extreme seeds are not distinct".into(),
        ));
    }
    Ok(ExtremePoints { seeds })
}

/// Arc-length position of the closest point to `p` on the polyline `points`.
fn polyline_parameter(points: &[Point3<f64>], p: &Point3<f64>) -> f64 {
    let mut best = (f64::INFINITY, 0.0);
    let mut offset = 0.0;
    for w in points.windows(2) {
        let seg = w[1] - w[0];
        let len = seg.norm();
        let t = if len < 1e-12 {
            0.0
        } else {
            ((p - w[0]).dot(&seg) / (len * len)).clamp(0.0, 1.0)
        };
        let closest = w[0] + seg * t;
        let d = (p - closest).norm();
        if d < best.0 {
            best = (d, offset + t * len);
        }
        offset += len;
    }
    best.1
}

/// Slab-centroid skeleton curve: bin region vertices along the principal
/// direction root->tip and take ordered slab centroids, lightly smoothed.
pub fn skeleton_curve(
    mesh: &TriMesh,
    region: &[usize],
    root_hint: &Point3<f64>,
    tip: &Point3<f64>,
    bins: usize,
) -> Result<SkeletonCurve> {
    let mut k = bins.max(3);
    if region.len() < 3 * k {
        k = (region.len() / 3).max(3);
    }
    if region.len() < 3 * 3 {
        return Err(SldError::SegmentationFailure(format!(
            "region too small for a skeleton curve ({} vertices)",
            region.len()
        )));
    }
    let dir = tip - root_hint;
    if dir.norm() < 1e-9 {
        return Err(SldError::SegmentationFailure(
            "skeleton root and tip coincide".into(),
        ));
    }
    let dir = dir.normalize();
    let projs: Vec<f64> = region
        .iter()
        .map(|&v| (mesh.vertices[v] - root_hint).dot(&dir))
        .collect();
    let lo = projs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = projs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(1e-9);

    let mut sums: Vec<(Vector3<f64>, usize)> = vec![(Vector3::zeros(), 0); k];
    for (i, &v) in region.iter().enumerate() {
        let bin = (((projs[i] - lo) / span * k as f64) as usize).min(k - 1);
        sums[bin].0 += mesh.vertices[v].coords;
        sums[bin].1 += 1;
    }
    let mut points: Vec<Point3<f64>> = sums
        .iter()
        .filter(|(_, n)| *n > 0)
        .map(|(s, n)| Point3::from(s / *n as f64))
        .collect();
    if points.len() < 2 {
        return Err(SldError::SegmentationFailure(
            "skeleton curve collapsed to a single slab".into(),
        ));
    }

    // the straight-axis slabs cut a curved region obliquely near its ends;
    // re-bin by arc-length position on the current centroid polyline so the
    // slabs turn with the curve
    for _ in 0..3 {
        let params: Vec<f64> = region
            .iter()
            .map(|&v| polyline_parameter(&points, &mesh.vertices[v]))
            .collect();
        let lo = params.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = params.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = (hi - lo).max(1e-9);
        let mut sums: Vec<(Vector3<f64>, usize)> = vec![(Vector3::zeros(), 0); k];
        for (i, &v) in region.iter().enumerate() {
            let bin = (((params[i] - lo) / span * k as f64) as usize).min(k - 1);
            sums[bin].0 += mesh.vertices[v].coords;
            sums[bin].1 += 1;
        }
        let refined: Vec<Point3<f64>> = sums
            .iter()
            .filter(|(_, n)| *n > 0)
            .map(|(s, n)| Point3::from(s / *n as f64))
            .collect();
        if refined.len() < 2 {
            break;
        }
        points = refined;
    }
    // one light smoothing pass on interior points; the center weight keeps
    // curved skeletons from being pulled onto their chords
    if points.len() > 2 {
        let orig = points.clone();
        for i in 1..orig.len() - 1 {
            points[i] = Point3::from(
                orig[i - 1].coords * 0.25 + orig[i].coords * 0.5 + orig[i + 1].coords * 0.25,
            );
        }
    }
    points.dedup_by(|a, b| (*a - *b).norm() < 1e-12);
    if points.len() < 2 {
        return Err(SldError::SegmentationFailure(
            "skeleton curve degenerate after smoothing".into(),
        ));
    }
    // orient root -> tip
    if (points[0] - root_hint).norm() > (points.last().unwrap() - root_hint).norm() {
        points.reverse();
    }
    Ok(SkeletonCurve {
        points,
        label: SegmentLabel::Lamina, // caller overwrites
    })
}

/// Classifies every arch vertex to the nearest skeleton curve within its
/// capture radius; everything else becomes lamina. Body vertices keep Body.
pub fn classify_by_skeleton(
    mesh: &TriMesh,
    arch: &[usize],
    curves: &[(SkeletonCurve, f64)],
    segmentation_seed: Option<&Segmentation>,
) -> Segmentation {
    let mut labels = match segmentation_seed {
        Some(s) => s.labels.clone(),
        None => vec![SegmentLabel::Body; mesh.vertices.len()],
    };
    let polylines: Vec<(SegmentLabel, Polyline, f64)> = curves
        .iter()
        .map(|(c, radius)| (c.label, c.polyline(), *radius))
        .collect();
    for &v in arch {
        let p = mesh.vertices[v];
        let mut best: Option<(f64, SegmentLabel)> = None;
        for (label, poly, radius) in &polylines {
            let d = quantize(poly.distance_to_point(&p));
            if d > quantize(*radius) {
                continue;
            }
            let better = match best {
                None => true,
                Some((bd, bl)) => d < bd || (d == bd && label.to_i32() < bl.to_i32()),
            };
            if better {
                best = Some((d, *label));
            }
        }
        labels[v] = best.map(|(_, l)| l).unwrap_or(SegmentLabel::Lamina);
    }
    let mut segmentation = Segmentation {
        vertex_count: mesh.vertices.len(),
        labels,
    };
    cleanup(mesh, &mut segmentation);
    segmentation
}

/// Reassigns non-largest components of every non-body label to the
/// neighboring label sharing the longest boundary, until stable.
fn cleanup(mesh: &TriMesh, segmentation: &mut Segmentation) {
    let adj = mesh.vertex_adjacency();
    for _ in 0..10 {
        let mut changed = false;
        for &label in SegmentLabel::ALL.iter().skip(1) {
            let members = segmentation.vertices_with(label);
            if members.is_empty() {
                continue;
            }
            let components = mesh.connected_components_with(&adj, &members);
            for island in components.iter().skip(1) {
                // neighbor label with the most boundary edges into the island
                let mut counts: BTreeMap<SegmentLabel, usize> = BTreeMap::new();
                for &v in island {
                    for &u in &adj.neighbors[v] {
                        let lu = segmentation.labels[u];
                        if lu != label {
                            *counts.entry(lu).or_insert(0) += 1;
                        }
                    }
                }
                let target = counts
                    .iter()
                    .max_by(|a, b| a.1.cmp(b.1).then(b.0.to_i32().cmp(&a.0.to_i32())))
                    .map(|(&l, _)| l)
                    .unwrap_or(SegmentLabel::Lamina);
                for &v in island {
                    segmentation.labels[v] = target;
                }
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
}

/// Full segmentation result: label map, per-process skeleton curves, and
/// the frame actually used (anterior sign re-checked against the body).
pub struct SegmentOutput {
    pub segmentation: Segmentation,
    pub curves: BTreeMap<SegmentLabel, SkeletonCurve>,
    pub frame: VertebraFrame,
    pub body: Vec<usize>,
    pub arch: Vec<usize>,
}

/// Composition of the segmentation stages.
pub fn segment(
    mesh: &TriMesh,
    frame: &VertebraFrame,
    config: &SegmentationConfig,
) -> Result<SegmentOutput> {
    let mut frame = *frame;
    let (mut body, mut arch) =
        split_body_arch_with(mesh, &frame, config).map_err(|e| e.at_stage("split_body_arch"))?;

    // anterior refinement: the body must lie anterior of the whole mesh
    let body_centroid = {
        let sum: Vector3<f64> = body.iter().map(|&v| mesh.vertices[v].coords).sum();
        Point3::from(sum / body.len() as f64)
    };
    if (body_centroid - mesh.centroid()).dot(&frame.anterior) < 0.0 {
        frame = frame.flipped_anterior();
        let redo = split_body_arch_with(mesh, &frame, config)
            .map_err(|e| e.at_stage("split_body_arch"))?;
        body = redo.0;
        arch = redo.1;
    }

    let extremes = cluster_extremes(mesh, &arch, &frame, config)
        .map_err(|e| e.at_stage("cluster_extremes"))?;

    // initial clusters: nearest seed by graph-geodesic distance
    let adj = mesh.vertex_adjacency();
    let mut arch_mask = vec![false; mesh.vertices.len()];
    for &v in &arch {
        arch_mask[v] = true;
    }
    let mut nearest: Vec<Option<(f64, SegmentLabel)>> = vec![None; mesh.vertices.len()];
    for (&label, &(seed, _)) in &extremes.seeds {
        let sp = geodesic::shortest_paths(mesh, &adj, seed, Some(&arch_mask));
        for &v in &arch {
            let d = sp.dist[v];
            if d.is_finite() {
                let better = match nearest[v] {
                    None => true,
                    Some((bd, bl)) => d < bd || (d == bd && label.to_i32() < bl.to_i32()),
                };
                if better {
                    nearest[v] = Some((d, label));
                }
            }
        }
    }
    let arch_centroid = {
        let sum: Vector3<f64> = arch.iter().map(|&v| mesh.vertices[v].coords).sum();
        Point3::from(sum / arch.len() as f64)
    };

    let mut curves_with_radius: Vec<(SkeletonCurve, f64)> = Vec::new();
    let mut curves: BTreeMap<SegmentLabel, SkeletonCurve> = BTreeMap::new();
    for (&label, &(seed, _)) in &extremes.seeds {
        let cluster: Vec<usize> = arch
            .iter()
            .copied()
            .filter(|&v| nearest[v].map(|(_, l)| l) == Some(label))
            .collect();
        if cluster.len() < 9 {
            return Err(SldError::SegmentationFailure(format!(
                "cluster for {label:?} too small ({} vertices)",
                cluster.len()
            ))
            .at_stage("skeleton_curve"));
        }
        let root_hint = cluster
            .iter()
            .copied()
            .min_by(|&a, &b| {
                let da = (mesh.vertices[a] - arch_centroid).norm();
                let db = (mesh.vertices[b] - arch_centroid).norm();
                da.partial_cmp(&db).unwrap()
            })
            .map(|v| mesh.vertices[v])
            .unwrap();
        let tip = mesh.vertices[seed];
        let mut curve = skeleton_curve(mesh, &cluster, &root_hint, &tip, config.skeleton_bins)
            .map_err(|e| e.at_stage("skeleton_curve"))?;
        curve.label = label;
        let poly = curve.polyline();
        let mut dists: Vec<f64> = cluster
            .iter()
            .map(|&v| poly.distance_to_point(&mesh.vertices[v]))
            .collect();
        dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = dists[dists.len() / 2];
        let radius = config.capture_scale * median;
        curves.insert(label, curve.clone());
        curves_with_radius.push((curve, radius));
    }

    let body_seed = Segmentation {
        labels: vec![SegmentLabel::Body; mesh.vertices.len()],
        vertex_count: mesh.vertices.len(),
    };
    let segmentation = classify_by_skeleton(mesh, &arch, &curves_with_radius, Some(&body_seed));

    Ok(SegmentOutput {
        segmentation,
        curves,
        frame,
        body,
        arch,
    })
}
