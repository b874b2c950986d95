//! Detection of the seven ligament landmark groups on a segmented vertebra.
//!
//! - ALL/PLL: equidistant points on the anterior/posterior arcs of the
//!   endplate boundaries (endplates from the normal-similarity test).
//! - ITL/SSL: skeleton-curve extension intersected with the process surface.
//! - ISL: spinous skeleton samples projected up/down onto the process.
//! - CL: facet surfaces (closest-surface extraction) cut by local
//!   transverse and sagittal planes; section extremes are the landmarks.
//! - LF: geodesic paths across the lamina between CL landmarks and the
//!   spinous root, resampled equidistantly.

use std::collections::BTreeMap;

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SldError};
use crate::mesh::closest::SurfaceIndex;
use crate::mesh::{geodesic, ray, section, Plane, Polyline, TriMesh};
use crate::preprocess::{dimensions, VertebraFrame};
use crate::segmentation::{SegmentLabel, Segmentation, SkeletonCurve};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LigamentKind {
    #[serde(rename = "ALL")]
    All,
    #[serde(rename = "PLL")]
    Pll,
    #[serde(rename = "ITL")]
    Itl,
    #[serde(rename = "SSL")]
    Ssl,
    #[serde(rename = "ISL")]
    Isl,
    #[serde(rename = "CL")]
    Cl,
    #[serde(rename = "LF")]
    Lf,
}

impl LigamentKind {
    pub const ALL_KINDS: [LigamentKind; 7] = [
        LigamentKind::All,
        LigamentKind::Pll,
        LigamentKind::Itl,
        LigamentKind::Ssl,
        LigamentKind::Isl,
        LigamentKind::Cl,
        LigamentKind::Lf,
    ];
}

/// Site qualifier: which plate, side, or facet a group attaches to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Site {
    None,
    Superior,
    Inferior,
    Left,
    Right,
    SupL,
    SupR,
    InfL,
    InfR,
}

impl Site {
    pub fn mirrored(self) -> Site {
        match self {
            Site::Left => Site::Right,
            Site::Right => Site::Left,
            Site::SupL => Site::SupR,
            Site::SupR => Site::SupL,
            Site::InfL => Site::InfR,
            Site::InfR => Site::InfL,
            other => other,
        }
    }
}

pub(crate) mod serde_points {
    use nalgebra::Point3;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(points: &[Point3<f64>], s: S) -> Result<S::Ok, S::Error> {
        let raw: Vec<[f64; 3]> = points.iter().map(|p| [p.x, p.y, p.z]).collect();
        raw.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Point3<f64>>, D::Error> {
        let raw: Vec<[f64; 3]> = Vec::deserialize(d)?;
        Ok(raw
            .into_iter()
            .map(|[x, y, z]| Point3::new(x, y, z))
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkGroup {
    pub kind: LigamentKind,
    pub site: Site,
    #[serde(with = "serde_points")]
    pub points: Vec<Point3<f64>>,
}

/// The pipeline's product: all landmark groups plus provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkSet {
    pub mesh_id: String,
    pub config: DetectionConfig,
    pub groups: Vec<LandmarkGroup>,
}

impl LandmarkSet {
    pub fn group(&self, kind: LigamentKind, site: Site) -> Option<&LandmarkGroup> {
        self.groups
            .iter()
            .find(|g| g.kind == kind && g.site == site)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectionConfig {
    /// Endplate extraction angle threshold, degrees.
    pub theta_deg: f64,
    pub n_all: usize,
    pub n_pll: usize,
    pub n_isl: usize,
    pub n_lf: usize,
    /// Angular half-width of the endplate edge arcs, as a fraction of pi.
    pub edge_arc_fraction: f64,
    /// Longitudinal shift of the virtual adjacent articular process used
    /// for facet extraction, as a fraction of the longitudinal extent.
    pub facet_shift_scale: f64,
    /// Reserved for the distance-quantile facet variant; 1.0 keeps every
    /// collected argmin vertex.
    pub facet_coverage_fraction: f64,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        DetectionConfig {
            theta_deg: 30.0,
            n_all: 3,
            n_pll: 3,
            n_isl: 5,
            n_lf: 5,
            edge_arc_fraction: 0.25,
            facet_shift_scale: 1.0,
            facet_coverage_fraction: 1.0,
        }
    }
}

impl DetectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta_deg > 0.0 && self.theta_deg < 90.0) {
            return Err(SldError::Parameter(format!(
                "theta_deg must be in (0, 90), got {}",
                self.theta_deg
            )));
        }
        for (name, n) in [
            ("n_all", self.n_all),
            ("n_pll", self.n_pll),
            ("n_isl", self.n_isl),
            ("n_lf", self.n_lf),
        ] {
            if n < 1 {
                return Err(SldError::Parameter(format!("{name} must be >= 1")));
            }
        }
        if !(self.edge_arc_fraction > 0.0 && self.edge_arc_fraction <= 0.5) {
            return Err(SldError::Parameter(
                "edge_arc_fraction must be in (0, 0.5]".into(),
            ));
        }
        Ok(())
    }
}

// ------------------------------------------------------------- endplates

/// Superior and inferior endplate face sets: body faces whose normal is
/// within `theta_deg` of +-longitudinal, each reduced to its largest
/// edge-connected component.
pub fn extract_endplates(
    mesh: &TriMesh,
    body: &[usize],
    frame: &VertebraFrame,
    theta_deg: f64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(theta_deg > 0.0 && theta_deg < 90.0) {
        return Err(SldError::Parameter(format!(
            "theta_deg must be in (0, 90), got {theta_deg}"
        )));
    }
    let mut in_body = vec![false; mesh.vertices.len()];
    for &v in body {
        in_body[v] = true;
    }
    let body_faces: Vec<usize> = (0..mesh.faces.len())
        .filter(|&fi| mesh.faces[fi].iter().all(|&v| in_body[v]))
        .collect();
    if body_faces.is_empty() {
        return Err(SldError::DetectionFailure("no body faces".into()));
    }
    let normals = mesh.face_normals()?;
    let cos_theta = theta_deg.to_radians().cos();
    let pick = |axis: Vector3<f64>, name: &str| -> Result<Vec<usize>> {
        let candidates: Vec<usize> = body_faces
            .iter()
            .copied()
            .filter(|&fi| normals[fi].dot(&axis) >= cos_theta)
            .collect();
        if candidates.is_empty() {
            return Err(SldError::DetectionFailure(format!(
                "{name} endplate empty at theta = {theta_deg} degrees; try a larger theta"
            )));
        }
        Ok(mesh.face_components(&candidates)[0].clone())
    };
    let superior = pick(frame.longitudinal, "superior")?;
    let inferior = pick(-frame.longitudinal, "inferior")?;
    Ok((superior, inferior))
}

// ------------------------------------------------------------- ALL / PLL

fn wrap_angle(a: f64) -> f64 {
    let mut a = a % std::f64::consts::TAU;
    if a > std::f64::consts::PI {
        a -= std::f64::consts::TAU;
    } else if a <= -std::f64::consts::PI {
        a += std::f64::consts::TAU;
    }
    a
}

/// Contiguous boundary sub-arc within `half_width` (radians) of the
/// direction at angle `center` around the plate centroid, clipped at the
/// window edges by angular interpolation.
fn boundary_arc(
    loop_points: &[Point3<f64>],
    centroid: &Point3<f64>,
    e1: &Vector3<f64>,
    e2: &Vector3<f64>,
    center: f64,
    half_width: f64,
) -> Result<(Polyline, Vec<usize>)> {
    let n = loop_points.len();
    let deltas: Vec<f64> = loop_points
        .iter()
        .map(|p| {
            let d = p - centroid;
            wrap_angle(d.dot(e2).atan2(d.dot(e1)) - center)
        })
        .collect();
    let inside: Vec<bool> = deltas.iter().map(|&d| d.abs() <= half_width).collect();
    if !inside.iter().any(|&b| b) {
        return Err(SldError::DetectionFailure(
            "no boundary vertex inside the edge arc window".into(),
        ));
    }
    // longest contiguous circular run of inside points
    let mut runs: Vec<(usize, usize)> = Vec::new(); // (start, len)
    let mut i = 0;
    while i < n {
        if inside[i] && (i == 0 || !inside[i - 1]) {
            let mut len = 0;
            while len < n && inside[(i + len) % n] {
                len += 1;
            }
            runs.push((i, len));
            i += len.max(1);
        } else {
            i += 1;
        }
    }
    // merge wrap-around duplicate
    if runs.len() > 1 {
        let first = runs[0];
        if first.0 == 0 && inside[n - 1] {
            runs.remove(0);
            if let Some(last) = runs.last_mut() {
                if (last.0 + last.1) % n >= first.1 {
                    // already covered by circular scan above
                } else {
                    last.1 += first.1;
                }
            }
        }
    }
    let &(start, len) = runs
        .iter()
        .max_by_key(|&&(_, len)| len)
        .ok_or_else(|| SldError::DetectionFailure("empty edge arc".into()))?;
    let mut run: Vec<usize> = (0..len).map(|k| (start + k) % n).collect();
    // orient by increasing angular offset
    if len >= 2 && deltas[run[0]] > deltas[run[len - 1]] {
        run.reverse();
    }

    let mut points: Vec<Point3<f64>> = Vec::with_capacity(len + 2);
    // clip at the window entry, interpolating linearly in angle
    let interpolate = |out_idx: usize, in_idx: usize, edge: f64| -> Option<Point3<f64>> {
        let (d_out, d_in) = (deltas[out_idx], deltas[in_idx]);
        let span = d_in - d_out;
        if span.abs() < 1e-15 || (d_out - edge).signum() == (d_in - edge).signum() {
            return None;
        }
        let t = (edge - d_out) / span;
        if !(0.0..=1.0).contains(&t) {
            return None;
        }
        Some(loop_points[out_idx] + (loop_points[in_idx] - loop_points[out_idx]) * t)
    };
    if len < n {
        let before = (run[0] + n - 1) % n;
        let after = (run[len - 1] + 1) % n;
        // the neighbor outside the run on the entry side; try both boundary edges
        if let Some(p) = interpolate(before, run[0], -half_width)
            .or_else(|| interpolate(after, run[0], -half_width))
        {
            points.push(p);
        }
        for &idx in &run {
            points.push(loop_points[idx]);
        }
        if let Some(p) = interpolate(after, run[len - 1], half_width)
            .or_else(|| interpolate(before, run[len - 1], half_width))
        {
            points.push(p);
        }
    } else {
        for &idx in &run {
            points.push(loop_points[idx]);
        }
    }
    points.dedup_by(|a, b| (*a - *b).norm() < 1e-12);
    if points.len() < 2 {
        return Err(SldError::DetectionFailure("edge arc degenerate".into()));
    }
    Ok((Polyline { points }, run))
}

/// ALL and PLL landmark groups for one endplate.
fn plate_edge_groups(
    mesh: &TriMesh,
    plate_faces: &[usize],
    frame: &VertebraFrame,
    site: Site,
    config: &DetectionConfig,
) -> Result<Vec<LandmarkGroup>> {
    let loops = mesh.boundary_loops(plate_faces)?;
    let ring = loops
        .first()
        .ok_or_else(|| SldError::DetectionFailure("endplate has no boundary loop".into()))?;
    let loop_points: Vec<Point3<f64>> = ring.iter().map(|&v| mesh.vertices[v]).collect();
    let centroid = Point3::from(
        loop_points.iter().map(|p| p.coords).sum::<Vector3<f64>>() / loop_points.len() as f64,
    );
    // plate-plane basis, e1 toward anterior
    let e1 =
        (frame.anterior - frame.longitudinal * frame.anterior.dot(&frame.longitudinal)).normalize();
    let e2 = frame.longitudinal.cross(&e1);
    let half_width = config.edge_arc_fraction * std::f64::consts::PI;

    let mut groups = Vec::with_capacity(2);
    for (kind, center, n) in [
        (LigamentKind::All, 0.0, config.n_all),
        (LigamentKind::Pll, std::f64::consts::PI, config.n_pll),
    ] {
        let (arc, run) = boundary_arc(&loop_points, &centroid, &e1, &e2, center, half_width)?;
        let points = if n == 1 {
            // single landmark: the boundary vertex closest to the arc direction
            let best = run
                .iter()
                .copied()
                .min_by(|&a, &b| {
                    let da = loop_points[a] - centroid;
                    let db = loop_points[b] - centroid;
                    let wa = wrap_angle(da.dot(&e2).atan2(da.dot(&e1)) - center).abs();
                    let wb = wrap_angle(db.dot(&e2).atan2(db.dot(&e1)) - center).abs();
                    wa.partial_cmp(&wb).unwrap()
                })
                .unwrap();
            vec![loop_points[best]]
        } else {
            arc.resample(n)
        };
        groups.push(LandmarkGroup { kind, site, points });
    }
    Ok(groups)
}

/// ALL/PLL x superior/inferior: equidistant points along the anterior and
/// posterior boundary arcs of both endplates.
pub fn detect_all_pll(
    mesh: &TriMesh,
    superior_plate: &[usize],
    inferior_plate: &[usize],
    frame: &VertebraFrame,
    config: &DetectionConfig,
) -> Result<Vec<LandmarkGroup>> {
    let mut groups = plate_edge_groups(mesh, superior_plate, frame, Site::Superior, config)?;
    groups.extend(plate_edge_groups(
        mesh,
        inferior_plate,
        frame,
        Site::Inferior,
        config,
    )?);
    Ok(groups)
}

// ------------------------------------------------------------- ITL / SSL

/// Tip landmark of one process: extend the last skeleton segment as a ray
/// and take the nearest surface hit on that process; if the ray exits
/// without a hit, fall back to the process vertex extreme along the ray.
fn process_tip_landmark(
    mesh: &TriMesh,
    segmentation: &Segmentation,
    curve: &SkeletonCurve,
) -> Result<Point3<f64>> {
    if curve.points.len() < 2 {
        return Err(SldError::DetectionFailure(
            "skeleton curve too short to extend".into(),
        ));
    }
    let n = curve.points.len();
    let origin = curve.points[n - 2];
    let dir = (curve.points[n - 1] - curve.points[n - 2]).normalize();
    let faces = segmentation.faces_with(mesh, curve.label);
    if let Some(hit) = ray::ray_surface_intersection(mesh, &faces, &origin, &dir)? {
        // ignore hits behind the tip region (e.g. the root cross-section)
        if (hit - origin).dot(&dir) > 0.0 {
            return Ok(hit);
        }
    }
    // fallback: extreme vertex along the ray direction
    let members = segmentation.vertices_with(curve.label);
    members
        .iter()
        .copied()
        .max_by(|&a, &b| {
            let pa = (mesh.vertices[a] - origin).dot(&dir);
            let pb = (mesh.vertices[b] - origin).dot(&dir);
            pa.partial_cmp(&pb).unwrap()
        })
        .map(|v| mesh.vertices[v])
        .ok_or_else(|| SldError::DetectionFailure("process has no vertices".into()))
}

/// ITL (left/right transverse tips) and SSL (spinous tip).
pub fn detect_itl_ssl(
    mesh: &TriMesh,
    segmentation: &Segmentation,
    curves: &BTreeMap<SegmentLabel, SkeletonCurve>,
) -> Result<Vec<LandmarkGroup>> {
    let mut groups = Vec::with_capacity(3);
    for (label, kind, site) in [
        (SegmentLabel::TransverseL, LigamentKind::Itl, Site::Left),
        (SegmentLabel::TransverseR, LigamentKind::Itl, Site::Right),
        (SegmentLabel::SpinousProcess, LigamentKind::Ssl, Site::None),
    ] {
        let curve = curves.get(&label).ok_or_else(|| {
            SldError::DetectionFailure(format!("missing skeleton curve for {label:?}"))
        })?;
        let point = process_tip_landmark(mesh, segmentation, curve)?;
        groups.push(LandmarkGroup {
            kind,
            site,
            points: vec![point],
        });
    }
    Ok(groups)
}

// ------------------------------------------------------------------ ISL

/// ISL superior and inferior groups: skeleton samples projected along the
/// local longitudinal axis (global longitudinal re-orthogonalized against
/// the spinous tangent) onto the spinous surface, then resampled.
pub fn detect_isl(
    mesh: &TriMesh,
    segmentation: &Segmentation,
    spinous_curve: &SkeletonCurve,
    frame: &VertebraFrame,
    config: &DetectionConfig,
) -> Result<Vec<LandmarkGroup>> {
    let pts = &spinous_curve.points;
    if pts.len() < 2 {
        return Err(SldError::DetectionFailure("spinous curve too short".into()));
    }
    let faces = segmentation.faces_with(mesh, SegmentLabel::SpinousProcess);
    if faces.is_empty() {
        return Err(SldError::DetectionFailure("no spinous faces".into()));
    }
    let mut upper: Vec<Point3<f64>> = Vec::new();
    let mut lower: Vec<Point3<f64>> = Vec::new();
    for (i, c) in pts.iter().enumerate() {
        let tangent = if i == 0 {
            pts[1] - pts[0]
        } else if i == pts.len() - 1 {
            pts[i] - pts[i - 1]
        } else {
            pts[i + 1] - pts[i - 1]
        };
        let tangent = tangent.normalize();
        let axis = frame.longitudinal - tangent * frame.longitudinal.dot(&tangent);
        let norm = axis.norm();
        if norm < 1e-9 {
            continue; // tangent parallel to the longitudinal axis
        }
        let axis = axis / norm;
        if let Some(hit) = ray::ray_surface_intersection(mesh, &faces, c, &axis)? {
            upper.push(hit);
        }
        if let Some(hit) = ray::ray_surface_intersection(mesh, &faces, c, &(-axis))? {
            lower.push(hit);
        }
    }
    if upper.len() < 2 || lower.len() < 2 {
        return Err(SldError::DetectionFailure(format!(
            "too few ISL surface hits (superior {}, inferior {})",
            upper.len(),
            lower.len()
        )));
    }
    let surface = SurfaceIndex::new(mesh, &faces);
    let resample = |hits: Vec<Point3<f64>>| -> Vec<Point3<f64>> {
        let mut cleaned = hits;
        cleaned.dedup_by(|a, b| (*a - *b).norm() < 1e-12);
        let poly = Polyline { points: cleaned };
        poly.resample(config.n_isl)
            .into_iter()
            .map(|p| surface.closest_point(&p).0)
            .collect()
    };
    let upper_points = resample(upper);
    let lower_points = resample(lower);
    // superior group is the one with the larger longitudinal coordinate
    let mean_l = |ps: &[Point3<f64>]| {
        ps.iter()
            .map(|p| p.coords.dot(&frame.longitudinal))
            .sum::<f64>()
            / ps.len() as f64
    };
    let (sup, inf) = if mean_l(&upper_points) >= mean_l(&lower_points) {
        (upper_points, lower_points)
    } else {
        (lower_points, upper_points)
    };
    Ok(vec![
        LandmarkGroup {
            kind: LigamentKind::Isl,
            site: Site::Superior,
            points: sup,
        },
        LandmarkGroup {
            kind: LigamentKind::Isl,
            site: Site::Inferior,
            points: inf,
        },
    ])
}

// ------------------------------------------------------------------- CL

/// Facet surface extraction (closest-surface rule): for every position in
/// `a2_positions`, the closest vertex of `a1` is collected (ties to the
/// lower vertex index); the collected set is reduced to its largest
/// edge-connected component.
pub fn extract_facet(
    mesh: &TriMesh,
    a1: &[usize],
    a2_positions: &[Point3<f64>],
    _coverage_fraction: f64,
) -> Result<Vec<usize>> {
    if a1.is_empty() || a2_positions.is_empty() {
        return Err(SldError::Parameter(
            "facet extraction needs non-empty vertex sets".into(),
        ));
    }
    let mut sorted_a1: Vec<usize> = a1.to_vec();
    sorted_a1.sort_unstable();
    sorted_a1.dedup();
    let mut collected: Vec<usize> = Vec::new();
    for y in a2_positions {
        let mut best = sorted_a1[0];
        let mut best_d = (mesh.vertices[best] - y).norm_squared();
        for &x in &sorted_a1[1..] {
            let d = (mesh.vertices[x] - y).norm_squared();
            if d < best_d {
                best = x;
                best_d = d;
            }
        }
        collected.push(best);
    }
    collected.sort_unstable();
    collected.dedup();
    let components = mesh.connected_components(&collected);
    Ok(components.into_iter().next().unwrap_or_default())
}

/// Four CL landmarks of one facet: endpoints of the local transverse and
/// sagittal plane sections through the facet centroid; falls back to
/// facet vertex extremes when a section degenerates.
pub fn detect_cl(
    mesh: &TriMesh,
    facet: &[usize],
    frame: &VertebraFrame,
    site: Site,
) -> Result<LandmarkGroup> {
    if facet.len() < 8 {
        return Err(SldError::DetectionFailure(format!(
            "facet {site:?} too small ({} vertices)",
            facet.len()
        )));
    }
    let centroid = Point3::from(
        facet
            .iter()
            .map(|&v| mesh.vertices[v].coords)
            .sum::<Vector3<f64>>()
            / facet.len() as f64,
    );
    // must span a 2D patch
    let spread = |axis: &Vector3<f64>| {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &v in facet {
            let s = (mesh.vertices[v] - centroid).dot(axis);
            lo = lo.min(s);
            hi = hi.max(s);
        }
        hi - lo
    };
    if spread(&frame.left) < 1e-6 && spread(&frame.longitudinal) < 1e-6 {
        return Err(SldError::DetectionFailure(format!(
            "facet {site:?} is degenerate (no 2D extent)"
        )));
    }
    let mut in_facet = vec![false; mesh.vertices.len()];
    for &v in facet {
        in_facet[v] = true;
    }
    let facet_faces: Vec<usize> = (0..mesh.faces.len())
        .filter(|&fi| mesh.faces[fi].iter().all(|&v| in_facet[v]))
        .collect();

    let mut points: Vec<Point3<f64>> = Vec::with_capacity(4);
    for (normal, sort_axis) in [
        (frame.longitudinal, frame.left), // transverse section, spread left-right
        (frame.left, frame.longitudinal), // sagittal section, spread sup-inf
    ] {
        let mut ends: Option<[Point3<f64>; 2]> = None;
        if !facet_faces.is_empty() {
            let plane = Plane {
                point: centroid,
                normal,
            };
            let curves = section::plane_intersection_curve(mesh, &facet_faces, &plane)?;
            if let Some(longest) = curves.first() {
                if longest.points.len() >= 2 {
                    ends = Some([longest.points[0], *longest.points.last().unwrap()]);
                }
            }
        }
        let [a, b] = ends.unwrap_or_else(|| {
            // fallback: facet vertex extremes along the sort axis
            let lo = facet
                .iter()
                .copied()
                .min_by(|&x, &y| {
                    let sx = (mesh.vertices[x] - centroid).dot(&sort_axis);
                    let sy = (mesh.vertices[y] - centroid).dot(&sort_axis);
                    sx.partial_cmp(&sy).unwrap()
                })
                .unwrap();
            let hi = facet
                .iter()
                .copied()
                .max_by(|&x, &y| {
                    let sx = (mesh.vertices[x] - centroid).dot(&sort_axis);
                    let sy = (mesh.vertices[y] - centroid).dot(&sort_axis);
                    sx.partial_cmp(&sy).unwrap()
                })
                .unwrap();
            [mesh.vertices[lo], mesh.vertices[hi]]
        });
        // deterministic order: ascending along the sort axis
        let (a, b) = if (a - centroid).dot(&sort_axis) <= (b - centroid).dot(&sort_axis) {
            (a, b)
        } else {
            (b, a)
        };
        points.push(a);
        points.push(b);
    }
    Ok(LandmarkGroup {
        kind: LigamentKind::Cl,
        site,
        points,
    })
}

/// Facets and CL groups for all four articular processes. With no adjacent
/// vertebra available, the neighbor process is approximated by the
/// ipsilateral opposite process shifted one vertebral height along the
/// longitudinal axis.
pub fn detect_cl_all(
    mesh: &TriMesh,
    segmentation: &Segmentation,
    frame: &VertebraFrame,
    config: &DetectionConfig,
) -> Result<Vec<(LandmarkGroup, Vec<usize>)>> {
    let dims = dimensions(mesh, frame);
    let shift = frame.longitudinal * (config.facet_shift_scale * dims.extent_longitudinal);
    let pairs = [
        (
            SegmentLabel::ArticularSupL,
            SegmentLabel::ArticularInfL,
            Site::SupL,
            1.0,
        ),
        (
            SegmentLabel::ArticularSupR,
            SegmentLabel::ArticularInfR,
            Site::SupR,
            1.0,
        ),
        (
            SegmentLabel::ArticularInfL,
            SegmentLabel::ArticularSupL,
            Site::InfL,
            -1.0,
        ),
        (
            SegmentLabel::ArticularInfR,
            SegmentLabel::ArticularSupR,
            Site::InfR,
            -1.0,
        ),
    ];
    let mut out = Vec::with_capacity(4);
    for (a1_label, a2_label, site, sign) in pairs {
        let a1 = segmentation.vertices_with(a1_label);
        let a2 = segmentation.vertices_with(a2_label);
        if a1.is_empty() || a2.is_empty() {
            return Err(SldError::DetectionFailure(format!(
                "missing articular process for facet {site:?}"
            )));
        }
        let a2_positions: Vec<Point3<f64>> = a2
            .iter()
            .map(|&v| mesh.vertices[v] + shift * sign)
            .collect();
        let facet = extract_facet(mesh, &a1, &a2_positions, config.facet_coverage_fraction)?;
        let group = detect_cl(mesh, &facet, frame, site)?;
        out.push((group, facet));
    }
    Ok(out)
}

// ------------------------------------------------------------------- LF

/// LF left/right: geodesic path across the lamina from the medial-most CL
/// landmark of each inferior facet to the spinous root, resampled.
pub fn detect_lf(
    mesh: &TriMesh,
    segmentation: &Segmentation,
    cl_groups: &[LandmarkGroup],
    spinous_root: &Point3<f64>,
    frame: &VertebraFrame,
    config: &DetectionConfig,
) -> Result<Vec<LandmarkGroup>> {
    // near the midline the junction vertices carry the spinous label, so
    // both labels are valid homes for the path endpoint
    let mut root_candidates = segmentation.vertices_with(SegmentLabel::Lamina);
    root_candidates.extend(segmentation.vertices_with(SegmentLabel::SpinousProcess));
    if root_candidates.is_empty() {
        return Err(SldError::DetectionFailure(
            "no lamina or spinous vertices".into(),
        ));
    }
    // per-side root: the nearest candidate on the ipsilateral half keeps
    // the two paths mirror images instead of meeting at one off-midline
    // vertex when the root point lies between two symmetric candidates
    let root_for = |side_sign: f64| -> usize {
        let nearest = |vs: &mut dyn Iterator<Item = usize>| {
            vs.min_by(|&a, &b| {
                let da = (mesh.vertices[a] - spinous_root).norm();
                let db = (mesh.vertices[b] - spinous_root).norm();
                da.partial_cmp(&db).unwrap()
            })
        };
        let mut ipsilateral = root_candidates
            .iter()
            .copied()
            .filter(|&v| side_sign * (mesh.vertices[v] - spinous_root).dot(&frame.left) >= 0.0);
        nearest(&mut ipsilateral)
            .or_else(|| nearest(&mut root_candidates.iter().copied()))
            .unwrap()
    };

    let adj = mesh.vertex_adjacency();
    let mut arch_mask = vec![true; mesh.vertices.len()];
    for (v, label) in segmentation.labels.iter().enumerate() {
        if *label == SegmentLabel::Body {
            arch_mask[v] = false;
        }
    }

    let mut groups = Vec::with_capacity(2);
    for (cl_site, lf_site, side_sign) in [
        (Site::InfL, Site::Left, 1.0),
        (Site::InfR, Site::Right, -1.0),
    ] {
        let root_vertex = root_for(side_sign);
        let cl = cl_groups
            .iter()
            .find(|g| g.kind == LigamentKind::Cl && g.site == cl_site)
            .ok_or_else(|| {
                SldError::DetectionFailure(format!("missing CL group for facet {cl_site:?}"))
            })?;
        // medial-most CL landmark: closest to the sagittal plane
        let start = cl
            .points
            .iter()
            .min_by(|a, b| {
                let da = (*a - frame.origin).dot(&frame.left).abs();
                let db = (*b - frame.origin).dot(&frame.left).abs();
                da.partial_cmp(&db).unwrap()
            })
            .copied()
            .unwrap();
        let start_vertex = (0..mesh.vertices.len())
            .filter(|&v| arch_mask[v])
            .min_by(|&a, &b| {
                let da = (mesh.vertices[a] - start).norm();
                let db = (mesh.vertices[b] - start).norm();
                da.partial_cmp(&db).unwrap()
            })
            .unwrap();
        let path =
            geodesic::geodesic_path_with(mesh, &adj, start_vertex, root_vertex, Some(&arch_mask))
                .or_else(|_| {
                    geodesic::geodesic_path_with(mesh, &adj, start_vertex, root_vertex, None)
                })
                .map_err(|_| {
                    SldError::DetectionFailure(format!(
                        "LF endpoints disconnected for side {lf_site:?}"
                    ))
                })?;
        let points = if path.len() < 2 {
            vec![path[0]; config.n_lf]
        } else {
            let surface = SurfaceIndex::over_all_faces(mesh);
            // relax the staircase wiggles of the edge-graph path onto the
            // surface so equal-length route choices do not shift samples
            let mut path = path;
            for _ in 0..20 {
                let prev = path.clone();
                for i in 1..path.len() - 1 {
                    let mid = Point3::from(
                        prev[i - 1].coords * 0.25
                            + prev[i].coords * 0.5
                            + prev[i + 1].coords * 0.25,
                    );
                    path[i] = surface.closest_point(&mid).0;
                }
            }
            Polyline { points: path }
                .resample(config.n_lf)
                .into_iter()
                .map(|p| surface.closest_point(&p).0)
                .collect()
        };
        groups.push(LandmarkGroup {
            kind: LigamentKind::Lf,
            site: lf_site,
            points,
        });
    }
    Ok(groups)
}

// ------------------------------------------------------------ aggregate

/// Per-detector failure report entry.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectionFailure {
    pub detector: String,
    pub message: String,
}

/// Runs all detectors, collecting per-detector failures instead of
/// aborting: a missing transverse process must not take ALL/PLL with it.
/// Groups are sorted by (kind, site).
pub fn detect_all_landmarks(
    mesh: &TriMesh,
    frame: &VertebraFrame,
    segmentation: &Segmentation,
    curves: &BTreeMap<SegmentLabel, SkeletonCurve>,
    body: &[usize],
    config: &DetectionConfig,
    mesh_id: &str,
) -> (LandmarkSet, Vec<DetectionFailure>) {
    let mut groups: Vec<LandmarkGroup> = Vec::new();
    let mut failures: Vec<DetectionFailure> = Vec::new();
    let record = |name: &str,
                  result: Result<Vec<LandmarkGroup>>,
                  groups: &mut Vec<LandmarkGroup>,
                  failures: &mut Vec<DetectionFailure>| {
        match result {
            Ok(gs) => groups.extend(gs),
            Err(e) => failures.push(DetectionFailure {
                detector: name.to_string(),
                message: e.to_string(),
            }),
        }
    };

    let endplates = extract_endplates(mesh, body, frame, config.theta_deg);
    match endplates {
        Ok((sup, inf)) => record(
            "all_pll",
            detect_all_pll(mesh, &sup, &inf, frame, config),
            &mut groups,
            &mut failures,
        ),
        Err(e) => failures.push(DetectionFailure {
            detector: "extract_endplates".into(),
            message: e.to_string(),
        }),
    }

    record(
        "itl_ssl",
        detect_itl_ssl(mesh, segmentation, curves),
        &mut groups,
        &mut failures,
    );

    match curves.get(&SegmentLabel::SpinousProcess) {
        Some(spinous) => {
            record(
                "isl",
                detect_isl(mesh, segmentation, spinous, frame, config),
                &mut groups,
                &mut failures,
            );
            let cl = detect_cl_all(mesh, segmentation, frame, config);
            match cl {
                Ok(cl_with_facets) => {
                    let cl_groups: Vec<LandmarkGroup> =
                        cl_with_facets.iter().map(|(g, _)| g.clone()).collect();
                    record(
                        "lf",
                        detect_lf(
                            mesh,
                            segmentation,
                            &cl_groups,
                            &spinous.root(),
                            frame,
                            config,
                        ),
                        &mut groups,
                        &mut failures,
                    );
                    groups.extend(cl_groups);
                }
                Err(e) => failures.push(DetectionFailure {
                    detector: "cl".into(),
                    message: e.to_string(),
                }),
            }
        }
        None => failures.push(DetectionFailure {
            detector: "isl".into(),
            message: "missing spinous skeleton curve".into(),
        }),
    }

    groups.sort_by(|a, b| a.kind.cmp(&b.kind).then(a.site.cmp(&b.site)));
    (
        LandmarkSet {
            mesh_id: mesh_id.to_string(),
            config: config.clone(),
            groups,
        },
        failures,
    )
}
