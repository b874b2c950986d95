//! Deterministic procedural vertebra-like meshes with analytic ground
//! truth, plus primitive meshes for desk-scale verification.
//!
//! The vertebra is the zero level set of a union of signed distance
//! parts (tilted-cap cylinder body, capsule processes), contoured with
//! naive surface nets on a sagittally symmetric grid. Truth labels come
//! from the nearest part, truth landmarks from the analytic part
//! geometry snapped onto the emitted surface.

use std::collections::BTreeMap;

use nalgebra::{point, Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SldError};
use crate::evaluation::{AnnotationGroup, AnnotationSet};
use crate::landmarks::{DetectionConfig, LandmarkGroup, LandmarkSet, LigamentKind, Site};
use crate::mesh::closest::SurfaceIndex;
use crate::mesh::{Polyline, TriMesh};
use crate::segmentation::SegmentLabel;

// ----------------------------------------------------------- primitives

pub fn make_primitive_sphere(radius: f64, subdivisions: usize) -> Result<TriMesh> {
    if radius <= 0.0 {
        return Err(SldError::Parameter("sphere radius must be positive".into()));
    }
    if subdivisions > 7 {
        return Err(SldError::Parameter(
            "sphere subdivisions capped at 7".into(),
        ));
    }
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let raw = [
        [-1.0, phi, 0.0],
        [1.0, phi, 0.0],
        [-1.0, -phi, 0.0],
        [1.0, -phi, 0.0],
        [0.0, -1.0, phi],
        [0.0, 1.0, phi],
        [0.0, -1.0, -phi],
        [0.0, 1.0, -phi],
        [phi, 0.0, -1.0],
        [phi, 0.0, 1.0],
        [-phi, 0.0, -1.0],
        [-phi, 0.0, 1.0],
    ];
    let mut vertices: Vec<Point3<f64>> = raw
        .iter()
        .map(|&[x, y, z]| {
            let v = Vector3::new(x, y, z).normalize() * radius;
            Point3::from(v)
        })
        .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut midpoint: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let mut mid = |u: usize, v: usize, vertices: &mut Vec<Point3<f64>>| -> usize {
                let key = (u.min(v), u.max(v));
                *midpoint.entry(key).or_insert_with(|| {
                    let m = (vertices[u].coords + vertices[v].coords) / 2.0;
                    vertices.push(Point3::from(m.normalize() * radius));
                    vertices.len() - 1
                })
            };
            let ab = mid(a, b, &mut vertices);
            let bc = mid(b, c, &mut vertices);
            let ca = mid(c, a, &mut vertices);
            next.push([a, ab, ca]);
            next.push([b, bc, ab]);
            next.push([c, ca, bc]);
            next.push([ab, bc, ca]);
        }
        faces = next;
    }
    TriMesh::new(vertices, faces)
}

pub fn make_primitive_box(lx: f64, ly: f64, lz: f64) -> Result<TriMesh> {
    if lx <= 0.0 || ly <= 0.0 || lz <= 0.0 {
        return Err(SldError::Parameter("box sides must be positive".into()));
    }
    let (hx, hy, hz) = (lx / 2.0, ly / 2.0, lz / 2.0);
    let mut vertices = Vec::with_capacity(8);
    for i in 0..8usize {
        vertices.push(point![
            if i & 1 == 0 { -hx } else { hx },
            if i & 2 == 0 { -hy } else { hy },
            if i & 4 == 0 { -hz } else { hz }
        ]);
    }
    let faces = vec![
        [0, 2, 3],
        [0, 3, 1],
        [4, 5, 7],
        [4, 7, 6],
        [0, 1, 5],
        [0, 5, 4],
        [2, 6, 7],
        [2, 7, 3],
        [0, 4, 6],
        [0, 6, 2],
        [1, 3, 7],
        [1, 7, 5],
    ];
    TriMesh::new(vertices, faces)
}

pub fn make_primitive_cylinder(
    radius: f64,
    height: f64,
    segments: usize,
    rings: usize,
) -> Result<TriMesh> {
    if radius <= 0.0 || height <= 0.0 {
        return Err(SldError::Parameter(
            "cylinder dimensions must be positive".into(),
        ));
    }
    if segments < 3 {
        return Err(SldError::Parameter(
            "cylinder needs at least 3 segments".into(),
        ));
    }
    let rings = rings.max(1);
    let mut vertices = Vec::new();
    for i in 0..=rings {
        let z = -height / 2.0 + height * i as f64 / rings as f64;
        for j in 0..segments {
            let a = std::f64::consts::TAU * j as f64 / segments as f64;
            vertices.push(point![radius * a.cos(), radius * a.sin(), z]);
        }
    }
    let bottom_center = vertices.len();
    vertices.push(point![0.0, 0.0, -height / 2.0]);
    let top_center = vertices.len();
    vertices.push(point![0.0, 0.0, height / 2.0]);

    let v = |i: usize, j: usize| i * segments + (j % segments);
    let mut faces = Vec::new();
    for i in 0..rings {
        for j in 0..segments {
            faces.push([v(i, j), v(i, j + 1), v(i + 1, j)]);
            faces.push([v(i, j + 1), v(i + 1, j + 1), v(i + 1, j)]);
        }
    }
    for j in 0..segments {
        faces.push([bottom_center, v(0, j + 1), v(0, j)]);
        faces.push([top_center, v(rings, j), v(rings, j + 1)]);
    }
    TriMesh::new(vertices, faces)
}

/// Capped tube swept along a circular arc of `angle_deg` degrees in the
/// z = 0 plane, starting at (major_r, 0, 0).
pub fn make_primitive_torus_section(
    major_r: f64,
    tube_r: f64,
    angle_deg: f64,
    segs_major: usize,
    segs_minor: usize,
) -> Result<TriMesh> {
    if major_r <= 0.0 || tube_r <= 0.0 || tube_r >= major_r {
        return Err(SldError::Parameter(
            "torus needs 0 < tube radius < major radius".into(),
        ));
    }
    if !(0.0..=360.0).contains(&angle_deg) || angle_deg == 0.0 {
        return Err(SldError::Parameter(
            "torus section angle must be in (0, 360] degrees".into(),
        ));
    }
    if segs_major < 2 || segs_minor < 3 {
        return Err(SldError::Parameter(
            "torus needs >= 2 major and >= 3 minor segments".into(),
        ));
    }
    let angle = angle_deg.to_radians();
    let mut vertices = Vec::new();
    for i in 0..=segs_major {
        let phi = angle * i as f64 / segs_major as f64;
        let u = Vector3::new(phi.cos(), phi.sin(), 0.0);
        let c = Point3::from(u * major_r);
        for j in 0..segs_minor {
            let psi = std::f64::consts::TAU * j as f64 / segs_minor as f64;
            vertices.push(c + u * (tube_r * psi.cos()) + Vector3::z() * (tube_r * psi.sin()));
        }
    }
    let start_center = vertices.len();
    vertices.push(point![major_r, 0.0, 0.0]);
    let end_center = vertices.len();
    vertices.push(point![major_r * angle.cos(), major_r * angle.sin(), 0.0]);

    let v = |i: usize, j: usize| i * segs_minor + (j % segs_minor);
    let mut faces = Vec::new();
    for i in 0..segs_major {
        for j in 0..segs_minor {
            faces.push([v(i, j), v(i + 1, j), v(i, j + 1)]);
            faces.push([v(i, j + 1), v(i + 1, j), v(i + 1, j + 1)]);
        }
    }
    for j in 0..segs_minor {
        faces.push([start_center, v(0, j), v(0, j + 1)]);
        faces.push([end_center, v(segs_major, j + 1), v(segs_major, j)]);
    }
    let mut mesh = TriMesh::new(vertices, faces)?;
    if mesh.signed_volume() < 0.0 {
        for f in &mut mesh.faces {
            f.swap(1, 2);
        }
    }
    Ok(mesh)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrimitiveKind {
    Sphere,
    Cylinder,
    Box,
    TorusSection,
}

impl std::str::FromStr for PrimitiveKind {
    type Err = SldError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sphere" => Ok(PrimitiveKind::Sphere),
            "cylinder" => Ok(PrimitiveKind::Cylinder),
            "box" => Ok(PrimitiveKind::Box),
            "torus_section" => Ok(PrimitiveKind::TorusSection),
            other => Err(SldError::Parameter(format!("unknown primitive {other:?}"))),
        }
    }
}

/// Uniform primitive entry point. `size` is interpreted per kind:
/// sphere (radius, -, -), cylinder (radius, height, -), box (lx, ly, lz),
/// torus section (major radius, tube radius, angle in degrees).
/// `resolution` scales tessellation density; spheres use it directly as
/// the subdivision count.
pub fn make_primitive(kind: PrimitiveKind, size: [f64; 3], resolution: usize) -> Result<TriMesh> {
    if resolution < 3 {
        return Err(SldError::Parameter(
            "primitive resolution must be at least 3 segments".into(),
        ));
    }
    match kind {
        PrimitiveKind::Sphere => make_primitive_sphere(size[0], resolution.min(7)),
        PrimitiveKind::Cylinder => {
            make_primitive_cylinder(size[0], size[1], resolution * 8, resolution)
        }
        PrimitiveKind::Box => make_primitive_box(size[0], size[1], size[2]),
        PrimitiveKind::TorusSection => {
            make_primitive_torus_section(size[0], size[1], size[2], resolution * 8, resolution * 4)
        }
    }
}

// ------------------------------------------------------- vertebra model

/// Generator parameters, in mm. Canonical pose: superior = +z,
/// anterior = -y, anatomical left = -x.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    pub body_radius: f64,
    pub body_half_height: f64,
    pub endplate_tilt_deg: f64,
    pub pedicle_offset: f64,
    pub pedicle_radius: f64,
    pub lamina_radius: f64,
    pub spinous_length: f64,
    pub spinous_radius: f64,
    pub spinous_pitch_deg: f64,
    pub transverse_length: f64,
    pub transverse_radius: f64,
    pub articular_length: f64,
    pub articular_radius: f64,
    /// Surface-net grid spacing, mm.
    pub resolution: f64,
    /// Exact sagittal mirror symmetry; false lengthens the right
    /// transverse process by 15%.
    pub mirror: bool,
    pub noise_amplitude: f64,
    pub seed: u64,
    /// Ablations: parts whose label appears here are not generated
    /// (Lamina and Body cannot be omitted).
    pub omit_parts: Vec<SegmentLabel>,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            body_radius: 18.0,
            body_half_height: 12.5,
            endplate_tilt_deg: 4.0,
            pedicle_offset: 13.0,
            pedicle_radius: 5.0,
            lamina_radius: 4.5,
            spinous_length: 30.0,
            spinous_radius: 4.0,
            spinous_pitch_deg: 10.0,
            transverse_length: 18.0,
            transverse_radius: 3.5,
            articular_length: 10.0,
            articular_radius: 4.5,
            resolution: 1.0,
            mirror: true,
            noise_amplitude: 0.0,
            seed: 0,
            omit_parts: Vec::new(),
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("body_radius", self.body_radius),
            ("body_half_height", self.body_half_height),
            ("pedicle_offset", self.pedicle_offset),
            ("pedicle_radius", self.pedicle_radius),
            ("lamina_radius", self.lamina_radius),
            ("spinous_length", self.spinous_length),
            ("spinous_radius", self.spinous_radius),
            ("transverse_length", self.transverse_length),
            ("transverse_radius", self.transverse_radius),
            ("articular_length", self.articular_length),
            ("articular_radius", self.articular_radius),
        ] {
            if v <= 0.0 {
                return Err(SldError::Parameter(format!("{name} must be positive")));
            }
        }
        if !(0.2..=2.5).contains(&self.resolution) {
            return Err(SldError::Parameter(format!(
                "resolution must be in [0.2, 2.5] mm, got {}",
                self.resolution
            )));
        }
        let min_radius = self
            .pedicle_radius
            .min(self.lamina_radius)
            .min(self.spinous_radius)
            .min(self.transverse_radius)
            .min(self.articular_radius);
        if self.noise_amplitude != 0.0
            && (self.noise_amplitude < 0.0 || self.noise_amplitude >= 0.2 * min_radius)
        {
            return Err(SldError::Parameter(format!(
                "noise amplitude must be in [0, {:.2}) mm",
                0.2 * min_radius
            )));
        }
        if self.articular_radius >= self.pedicle_offset {
            return Err(SldError::Parameter(
                "articular radius exceeds the pedicle gap; processes would merge across the midline"
                    .into(),
            ));
        }
        if !(0.0..60.0).contains(&self.endplate_tilt_deg)
            || !(0.0..60.0).contains(&self.spinous_pitch_deg)
        {
            return Err(SldError::Parameter(
                "tilt and pitch angles must be in [0, 60) degrees".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy)]
enum Shape {
    Capsule {
        a: Point3<f64>,
        b: Point3<f64>,
        r: f64,
    },
    /// Cylinder whose axis is +z rotated by `tilt` about +x (caps tilted
    /// toward posterior-up).
    TiltedCylinder {
        center: Point3<f64>,
        radius: f64,
        half_height: f64,
        tilt: f64,
    },
}

impl Shape {
    fn sdf(&self, p: &Point3<f64>) -> f64 {
        match *self {
            Shape::Capsule { a, b, r } => {
                let ab = b - a;
                let t = ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
                (p - (a + ab * t)).norm() - r
            }
            Shape::TiltedCylinder {
                center,
                radius,
                half_height,
                tilt,
            } => {
                let d = p - center;
                // rotate into the cylinder frame (inverse rotation about x)
                let (s, c) = tilt.sin_cos();
                let q = Vector3::new(d.x, d.y * c + d.z * s, -d.y * s + d.z * c);
                let dxy = (q.x * q.x + q.y * q.y).sqrt() - radius;
                let dz = q.z.abs() - half_height;
                if dxy <= 0.0 && dz <= 0.0 {
                    dxy.max(dz)
                } else {
                    (dxy.max(0.0).powi(2) + dz.max(0.0).powi(2)).sqrt()
                }
            }
        }
    }

    fn aabb(&self) -> (Point3<f64>, Point3<f64>) {
        match *self {
            Shape::Capsule { a, b, r } => {
                let lo = a.coords.inf(&b.coords).add_scalar(-r);
                let hi = a.coords.sup(&b.coords).add_scalar(r);
                (Point3::from(lo), Point3::from(hi))
            }
            Shape::TiltedCylinder {
                center,
                radius,
                half_height,
                ..
            } => {
                // loose box: axis-aligned bound of the untilted cylinder
                // padded by the tilt reach
                let reach = radius + half_height;
                (
                    Point3::from(center.coords.add_scalar(-reach)),
                    Point3::from(center.coords.add_scalar(reach)),
                )
            }
        }
    }
}

struct Part {
    shape: Shape,
    label: SegmentLabel,
    /// Pedicles straddle the body/arch split; vertices anterior of the
    /// cut are relabeled Body.
    body_cut: Option<f64>,
}

struct Model {
    parts: Vec<Part>,
    spinous_root: Point3<f64>,
    arch_y: f64,
}

fn build_model(p: &SynthParams) -> Model {
    let arch_y = 14.0;
    let spinous_root = point![0.0, 27.0, 0.0];
    let po = p.pedicle_offset;
    let mut parts = Vec::new();

    parts.push(Part {
        shape: Shape::TiltedCylinder {
            center: point![0.0, -12.0, 0.0],
            radius: p.body_radius,
            half_height: p.body_half_height,
            tilt: p.endplate_tilt_deg.to_radians(),
        },
        label: SegmentLabel::Body,
        body_cut: None,
    });
    let pedicle_cut = 9.0;
    for side in [-1.0, 1.0] {
        parts.push(Part {
            shape: Shape::Capsule {
                a: point![side * po, 0.0, 0.0],
                b: point![side * po, arch_y, 0.0],
                r: p.pedicle_radius,
            },
            label: SegmentLabel::Lamina,
            body_cut: Some(pedicle_cut),
        });
        parts.push(Part {
            shape: Shape::Capsule {
                a: point![side * po, 16.0, 0.0],
                b: spinous_root,
                r: p.lamina_radius,
            },
            label: SegmentLabel::Lamina,
            body_cut: None,
        });
    }

    let omitted = |label: SegmentLabel| p.omit_parts.contains(&label);
    if !omitted(SegmentLabel::SpinousProcess) {
        let pitch = p.spinous_pitch_deg.to_radians();
        let dir = Vector3::new(0.0, pitch.cos(), -pitch.sin());
        parts.push(Part {
            shape: Shape::Capsule {
                a: spinous_root,
                b: spinous_root + dir * p.spinous_length,
                r: p.spinous_radius,
            },
            label: SegmentLabel::SpinousProcess,
            body_cut: None,
        });
    }
    for (label, side) in [
        (SegmentLabel::TransverseL, -1.0),
        (SegmentLabel::TransverseR, 1.0),
    ] {
        if omitted(label) {
            continue;
        }
        let mut length = p.transverse_length;
        if !p.mirror && side > 0.0 {
            length *= 1.15;
        }
        parts.push(Part {
            shape: Shape::Capsule {
                a: point![side * po, arch_y, 0.0],
                b: point![side * (po + length), arch_y, 0.0],
                r: p.transverse_radius,
            },
            label,
            body_cut: None,
        });
    }
    for (label, side, updown) in [
        (SegmentLabel::ArticularSupL, -1.0, 1.0),
        (SegmentLabel::ArticularSupR, 1.0, 1.0),
        (SegmentLabel::ArticularInfL, -1.0, -1.0),
        (SegmentLabel::ArticularInfR, 1.0, -1.0),
    ] {
        if omitted(label) {
            continue;
        }
        parts.push(Part {
            shape: Shape::Capsule {
                a: point![side * po, 15.0, updown * 3.0],
                b: point![side * po, 17.0, updown * (3.0 + p.articular_length)],
                r: p.articular_radius,
            },
            label,
            body_cut: None,
        });
    }
    Model {
        parts,
        spinous_root,
        arch_y,
    }
}

impl Model {
    fn sdf(&self, p: &Point3<f64>) -> f64 {
        self.parts
            .iter()
            .map(|part| part.shape.sdf(p))
            .fold(f64::INFINITY, f64::min)
    }

    fn label_at(&self, p: &Point3<f64>) -> SegmentLabel {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, part) in self.parts.iter().enumerate() {
            let d = part.shape.sdf(p);
            if d < best_d {
                best = i;
                best_d = d;
            }
        }
        let part = &self.parts[best];
        match part.body_cut {
            Some(cut) if p.y < cut => SegmentLabel::Body,
            _ => part.label,
        }
    }
}

// ---------------------------------------------------------- surface nets

const CORNER_OFFSETS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [0, 1, 0],
    [1, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [0, 1, 1],
    [1, 1, 1],
];

const CELL_EDGES: [(usize, usize); 12] = [
    (0, 1),
    (2, 3),
    (4, 5),
    (6, 7),
    (0, 2),
    (1, 3),
    (4, 6),
    (5, 7),
    (0, 4),
    (1, 5),
    (2, 6),
    (3, 7),
];

fn surface_nets(model: &Model, res: f64) -> Result<TriMesh> {
    // grid bounds: union of part boxes, padded, sagittally symmetric
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for part in &model.parts {
        let (plo, phi) = part.shape.aabb();
        lo = lo.inf(&plo.coords);
        hi = hi.sup(&phi.coords);
    }
    let pad = 2.0 * res;
    let half_x = (((-lo.x).max(hi.x) + pad) / res).ceil() as i64;
    let j0 = ((lo.y - pad) / res).floor() as i64;
    let j1 = ((hi.y + pad) / res).ceil() as i64;
    let k0 = ((lo.z - pad) / res).floor() as i64;
    let k1 = ((hi.z + pad) / res).ceil() as i64;
    let nx = (2 * half_x) as usize; // cells
    let ny = (j1 - j0) as usize;
    let nz = (k1 - k0) as usize;
    let xs: Vec<f64> = (0..=nx).map(|i| (i as f64 - half_x as f64) * res).collect();
    let ys: Vec<f64> = (0..=ny).map(|j| (j0 + j as i64) as f64 * res).collect();
    let zs: Vec<f64> = (0..=nz).map(|k| (k0 + k as i64) as f64 * res).collect();

    let cidx = |i: usize, j: usize, k: usize| (i * (ny + 1) + j) * (nz + 1) + k;
    let mut values = vec![0.0f64; (nx + 1) * (ny + 1) * (nz + 1)];
    for i in 0..=nx {
        for j in 0..=ny {
            for k in 0..=nz {
                values[cidx(i, j, k)] = model.sdf(&point![xs[i], ys[j], zs[k]]);
            }
        }
    }
    // boundary samples must be outside for a closed contour
    for i in 0..=nx {
        for j in 0..=ny {
            for k in 0..=nz {
                if (i == 0 || i == nx || j == 0 || j == ny || k == 0 || k == nz)
                    && values[cidx(i, j, k)] <= 0.0
                {
                    return Err(SldError::Parameter(
                        "geometry reaches the sampling bounds".into(),
                    ));
                }
            }
        }
    }

    let inside = |v: f64| v < 0.0;
    let vidx = |i: usize, j: usize, k: usize| (i * ny + j) * nz + k;
    let mut cell_vertex = vec![u32::MAX; nx * ny * nz];
    let mut vertices: Vec<Point3<f64>> = Vec::new();
    for i in 0..nx {
        for j in 0..ny {
            for k in 0..nz {
                let corner_vals: [f64; 8] = std::array::from_fn(|c| {
                    let [di, dj, dk] = CORNER_OFFSETS[c];
                    values[cidx(i + di, j + dj, k + dk)]
                });
                let first = inside(corner_vals[0]);
                if corner_vals.iter().all(|&v| inside(v) == first) {
                    continue;
                }
                let corner_pos = |c: usize| -> Point3<f64> {
                    let [di, dj, dk] = CORNER_OFFSETS[c];
                    point![xs[i + di], ys[j + dj], zs[k + dk]]
                };
                // crossings are oriented inside-to-outside and summed in a
                // mirror-invariant order so that sagittally mirrored cells
                // produce bitwise x-negated dual vertices
                let mut crossings: Vec<Vector3<f64>> = Vec::new();
                for &(c0, c1) in &CELL_EDGES {
                    let (s0, s1) = (corner_vals[c0], corner_vals[c1]);
                    if inside(s0) != inside(s1) {
                        let (ci, co, si, so) = if inside(s0) {
                            (c0, c1, s0, s1)
                        } else {
                            (c1, c0, s1, s0)
                        };
                        let t = si / (si - so);
                        let p0 = corner_pos(ci);
                        let p1 = corner_pos(co);
                        crossings.push(p0.coords + (p1 - p0) * t);
                    }
                }
                crossings.sort_by(|a, b| {
                    (a.y, a.z, a.x.abs())
                        .partial_cmp(&(b.y, b.z, b.x.abs()))
                        .unwrap()
                });
                let sum = crossings
                    .iter()
                    .fold(Vector3::zeros(), |acc: Vector3<f64>, c| acc + c);
                cell_vertex[vidx(i, j, k)] = vertices.len() as u32;
                vertices.push(Point3::from(sum / crossings.len() as f64));
            }
        }
    }

    // one quad per sign-changing grid edge, spanning the four incident cells
    let mut faces: Vec<[usize; 3]> = Vec::new();
    let mut emit = |cells: [u32; 4], flip: bool| {
        debug_assert!(cells.iter().all(|&c| c != u32::MAX));
        let q: Vec<usize> = cells.iter().map(|&c| c as usize).collect();
        let order: [usize; 4] = if flip {
            [q[0], q[3], q[2], q[1]]
        } else {
            [q[0], q[1], q[2], q[3]]
        };
        faces.push([order[0], order[1], order[2]]);
        faces.push([order[0], order[2], order[3]]);
    };
    for i in 0..=nx {
        for j in 0..=ny {
            for k in 0..=nz {
                let s0 = values[cidx(i, j, k)];
                // x edge
                if i < nx && j >= 1 && j < ny && k >= 1 && k < nz {
                    let s1 = values[cidx(i + 1, j, k)];
                    if inside(s0) != inside(s1) {
                        emit(
                            [
                                cell_vertex[vidx(i, j - 1, k - 1)],
                                cell_vertex[vidx(i, j, k - 1)],
                                cell_vertex[vidx(i, j, k)],
                                cell_vertex[vidx(i, j - 1, k)],
                            ],
                            inside(s0),
                        );
                    }
                }
                // y edge
                if j < ny && k >= 1 && k < nz && i >= 1 && i < nx {
                    let s1 = values[cidx(i, j + 1, k)];
                    if inside(s0) != inside(s1) {
                        emit(
                            [
                                cell_vertex[vidx(i - 1, j, k - 1)],
                                cell_vertex[vidx(i - 1, j, k)],
                                cell_vertex[vidx(i, j, k)],
                                cell_vertex[vidx(i, j, k - 1)],
                            ],
                            inside(s0),
                        );
                    }
                }
                // z edge
                if k < nz && i >= 1 && i < nx && j >= 1 && j < ny {
                    let s1 = values[cidx(i, j, k + 1)];
                    if inside(s0) != inside(s1) {
                        emit(
                            [
                                cell_vertex[vidx(i - 1, j - 1, k)],
                                cell_vertex[vidx(i, j - 1, k)],
                                cell_vertex[vidx(i, j, k)],
                                cell_vertex[vidx(i - 1, j, k)],
                            ],
                            inside(s0),
                        );
                    }
                }
            }
        }
    }

    // dual vertices of adjacent cells coincide when a crossing falls exactly
    // on a shared grid corner; weld them and drop the degenerate triangles
    let mut remap: Vec<usize> = Vec::with_capacity(vertices.len());
    let mut welded: Vec<Point3<f64>> = Vec::new();
    let mut index: std::collections::HashMap<[i64; 3], usize> = Default::default();
    for p in &vertices {
        let key = [p.x, p.y, p.z].map(|c| (c / 1e-9).round() as i64);
        let id = *index.entry(key).or_insert_with(|| {
            welded.push(*p);
            welded.len() - 1
        });
        remap.push(id);
    }
    let faces: Vec<[usize; 3]> = faces
        .into_iter()
        .map(|f| f.map(|v| remap[v]))
        .filter(|&[a, b, c]| {
            a != b
                && b != c
                && a != c
                && (welded[b] - welded[a])
                    .cross(&(welded[c] - welded[a]))
                    .norm()
                    > 1e-10
        })
        .collect();

    let mut mesh = TriMesh::new(welded, faces)?;
    if mesh.signed_volume() < 0.0 {
        for f in &mut mesh.faces {
            f.swap(1, 2);
        }
    }
    Ok(mesh)
}

// --------------------------------------------------------------- truth

/// Analytic ground truth emitted alongside the synthetic mesh.
#[derive(Debug, Clone)]
pub struct SynthTruth {
    pub labels: Vec<SegmentLabel>,
    pub body_vertices: Vec<usize>,
    pub landmarks: LandmarkSet,
    pub annotations: AnnotationSet,
    /// Analytic tip per process, snapped to the surface.
    pub tips: BTreeMap<SegmentLabel, Point3<f64>>,
    /// Analytic skeleton centerlines per process.
    pub centerlines: BTreeMap<SegmentLabel, Polyline>,
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![(a + b) / 2.0];
    }
    (0..n)
        .map(|i| a + (b - a) * i as f64 / (n - 1) as f64)
        .collect()
}

fn min_dist_to_samples(p: &Point3<f64>, samples: &[Point3<f64>]) -> f64 {
    samples
        .iter()
        .map(|s| (p - s).norm())
        .fold(f64::INFINITY, f64::min)
}

pub fn make_synthetic_vertebra(params: &SynthParams) -> Result<(TriMesh, SynthTruth)> {
    params.validate()?;
    let model = build_model(params);
    let mut mesh = surface_nets(&model, params.resolution)?;

    if params.noise_amplitude > 0.0 {
        let face_normals = mesh.face_normals()?;
        let mut vertex_normals = vec![Vector3::zeros(); mesh.vertices.len()];
        for (fi, f) in mesh.faces.iter().enumerate() {
            let area = mesh.face_area(fi);
            for &v in f {
                vertex_normals[v] += face_normals[fi] * area;
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        for (v, n) in vertex_normals.iter().enumerate() {
            let d: f64 = rng.gen_range(-params.noise_amplitude..=params.noise_amplitude);
            if n.norm() > 1e-12 {
                mesh.vertices[v] += n.normalize() * d;
            }
        }
    }

    // per-vertex truth labels from the nearest part
    let labels: Vec<SegmentLabel> = mesh.vertices.iter().map(|p| model.label_at(p)).collect();
    let body_vertices: Vec<usize> = labels
        .iter()
        .enumerate()
        .filter(|(_, l)| **l == SegmentLabel::Body)
        .map(|(v, _)| v)
        .collect();
    mesh = mesh.with_labels(labels.iter().map(|l| l.to_i32()).collect())?;

    let surface = SurfaceIndex::over_all_faces(&mesh);
    let snap = |p: Point3<f64>| surface.closest_point(&p).0;
    let detection = DetectionConfig::default();

    let mut groups: Vec<LandmarkGroup> = Vec::new();
    let mut annotations: Vec<AnnotationGroup> = Vec::new();
    let mut tips: BTreeMap<SegmentLabel, Point3<f64>> = BTreeMap::new();
    let mut centerlines: BTreeMap<SegmentLabel, Polyline> = BTreeMap::new();
    let omitted = |label: SegmentLabel| params.omit_parts.contains(&label);

    let patch = |arc: &[Point3<f64>], radius: f64, filter: Option<&[SegmentLabel]>| -> Vec<usize> {
        (0..mesh.vertices.len())
            .filter(|&v| {
                if let Some(allowed) = filter {
                    if !allowed.contains(&labels[v]) {
                        return false;
                    }
                }
                min_dist_to_samples(&mesh.vertices[v], arc) <= radius
            })
            .collect()
    };

    // endplate rim arcs: the body is a tilted cylinder, rim = cap circle
    {
        let tilt = params.endplate_tilt_deg.to_radians();
        let axis = Vector3::new(0.0, tilt.sin(), tilt.cos());
        let e_ant = Vector3::new(0.0, -tilt.cos(), tilt.sin());
        let e_lat = Vector3::x();
        let center = point![0.0, -12.0, 0.0];
        let rim = |top: f64, phi: f64| -> Point3<f64> {
            center
                + axis * (top * params.body_half_height)
                + (e_ant * phi.cos() + e_lat * phi.sin()) * params.body_radius
        };
        let half = detection.edge_arc_fraction * std::f64::consts::PI;
        for (site, top) in [(Site::Superior, 1.0), (Site::Inferior, -1.0)] {
            for (kind, center_phi, n) in [
                (LigamentKind::All, 0.0, detection.n_all),
                (LigamentKind::Pll, std::f64::consts::PI, detection.n_pll),
            ] {
                let points: Vec<Point3<f64>> = linspace(-half, half, n)
                    .into_iter()
                    .map(|d| snap(rim(top, center_phi + d)))
                    .collect();
                let dense: Vec<Point3<f64>> = linspace(-half, half, 64)
                    .into_iter()
                    .map(|d| rim(top, center_phi + d))
                    .collect();
                let patch_vertices = patch(&dense, 3.0, Some(&[SegmentLabel::Body]));
                groups.push(LandmarkGroup { kind, site, points });
                annotations.push(AnnotationGroup {
                    kind,
                    site,
                    points: Vec::new(),
                    patch_vertices,
                });
            }
        }
    }

    // transverse tips (ITL)
    for (label, site, side) in [
        (SegmentLabel::TransverseL, Site::Left, -1.0),
        (SegmentLabel::TransverseR, Site::Right, 1.0),
    ] {
        if omitted(label) {
            continue;
        }
        let mut length = params.transverse_length;
        if !params.mirror && side > 0.0 {
            length *= 1.15;
        }
        let a = point![side * params.pedicle_offset, model.arch_y, 0.0];
        let b = point![side * (params.pedicle_offset + length), model.arch_y, 0.0];
        let tip = snap(b + (b - a).normalize() * params.transverse_radius);
        tips.insert(label, tip);
        centerlines.insert(label, Polyline::new(vec![a, b])?);
        groups.push(LandmarkGroup {
            kind: LigamentKind::Itl,
            site,
            points: vec![tip],
        });
        annotations.push(AnnotationGroup {
            kind: LigamentKind::Itl,
            site,
            points: Vec::new(),
            patch_vertices: patch(&[tip], 3.0, Some(&[label])),
        });
    }

    // spinous process: SSL tip and ISL upper/lower lines
    if !omitted(SegmentLabel::SpinousProcess) {
        let pitch = params.spinous_pitch_deg.to_radians();
        let dir = Vector3::new(0.0, pitch.cos(), -pitch.sin());
        let up = Vector3::new(0.0, pitch.sin(), pitch.cos());
        let s0 = model.spinous_root;
        let s1 = s0 + dir * params.spinous_length;
        let tip = snap(s1 + dir * params.spinous_radius);
        tips.insert(SegmentLabel::SpinousProcess, tip);
        centerlines.insert(SegmentLabel::SpinousProcess, Polyline::new(vec![s0, s1])?);
        groups.push(LandmarkGroup {
            kind: LigamentKind::Ssl,
            site: Site::None,
            points: vec![tip],
        });
        annotations.push(AnnotationGroup {
            kind: LigamentKind::Ssl,
            site: Site::None,
            points: Vec::new(),
            patch_vertices: patch(&[tip], 3.0, Some(&[SegmentLabel::SpinousProcess])),
        });
        for (site, sign) in [(Site::Superior, 1.0), (Site::Inferior, -1.0)] {
            let offset = up * (sign * params.spinous_radius);
            let points: Vec<Point3<f64>> = linspace(0.15, 0.85, detection.n_isl)
                .into_iter()
                .map(|t| snap(s0 + (s1 - s0) * t + offset))
                .collect();
            let dense: Vec<Point3<f64>> = linspace(0.05, 0.95, 64)
                .into_iter()
                .map(|t| s0 + (s1 - s0) * t + offset)
                .collect();
            groups.push(LandmarkGroup {
                kind: LigamentKind::Isl,
                site,
                points,
            });
            annotations.push(AnnotationGroup {
                kind: LigamentKind::Isl,
                site,
                points: Vec::new(),
                patch_vertices: patch(&dense, 2.5, Some(&[SegmentLabel::SpinousProcess])),
            });
        }
    }

    // articular processes: CL rim points and LF chains
    let mut lf_ready = true;
    for (label, site, side, updown) in [
        (SegmentLabel::ArticularSupL, Site::SupL, -1.0, 1.0),
        (SegmentLabel::ArticularSupR, Site::SupR, 1.0, 1.0),
        (SegmentLabel::ArticularInfL, Site::InfL, -1.0, -1.0),
        (SegmentLabel::ArticularInfR, Site::InfR, 1.0, -1.0),
    ] {
        if omitted(label) {
            lf_ready = false;
            continue;
        }
        let a = point![side * params.pedicle_offset, 15.0, updown * 3.0];
        let b = point![
            side * params.pedicle_offset,
            17.0,
            updown * (3.0 + params.articular_length)
        ];
        let axis = (b - a).normalize();
        let e1 = (Vector3::x() - axis * axis.x).normalize();
        let e2 = axis.cross(&e1);
        let r = params.articular_radius;
        let points: Vec<Point3<f64>> = [e1 * -r, e1 * r, e2 * -r, e2 * r]
            .into_iter()
            .map(|o| snap(b + o))
            .collect();
        let cap = b + axis * r;
        tips.insert(label, snap(cap));
        centerlines.insert(label, Polyline::new(vec![a, b])?);
        groups.push(LandmarkGroup {
            kind: LigamentKind::Cl,
            site,
            points,
        });
        annotations.push(AnnotationGroup {
            kind: LigamentKind::Cl,
            site,
            points: Vec::new(),
            patch_vertices: patch(&[b], r + 1.5, Some(&[label])),
        });
    }
    if lf_ready && !omitted(SegmentLabel::SpinousProcess) {
        for (site, side) in [(Site::Left, -1.0), (Site::Right, 1.0)] {
            let po = params.pedicle_offset;
            let inf_top = point![
                side * po,
                17.0,
                -(3.0 + params.articular_length) + params.articular_radius
            ];
            let chain = Polyline::new(vec![
                inf_top,
                point![side * po, 16.0, 0.0],
                model.spinous_root,
            ])?;
            let points: Vec<Point3<f64>> = chain
                .resample(detection.n_lf)
                .into_iter()
                .map(snap)
                .collect();
            // the attachment patch runs from the very tip of the inferior
            // articular process, below the landmark chain itself
            let inf_tip = point![
                side * po,
                17.0,
                -(3.0 + params.articular_length) - params.articular_radius
            ];
            // the patch also reaches a short way onto the spinous base,
            // where the ligament blends into the interspinous attachment
            let pitch = params.spinous_pitch_deg.to_radians();
            let spinous_dir = Vector3::new(0.0, pitch.cos(), -pitch.sin());
            let patch_chain = Polyline::new(vec![
                inf_tip,
                inf_top,
                point![side * po, 16.0, 0.0],
                model.spinous_root,
                model.spinous_root + spinous_dir * (0.35 * params.spinous_length),
            ])?;
            let dense: Vec<Point3<f64>> = (0..64)
                .map(|i| patch_chain.point_at(patch_chain.length() * i as f64 / 63.0))
                .collect();
            groups.push(LandmarkGroup {
                kind: LigamentKind::Lf,
                site,
                points,
            });
            annotations.push(AnnotationGroup {
                kind: LigamentKind::Lf,
                site,
                points: Vec::new(),
                patch_vertices: patch(&dense, 5.0, None),
            });
        }
    }

    groups.sort_by(|a, b| a.kind.cmp(&b.kind).then(a.site.cmp(&b.site)));
    annotations.sort_by(|a, b| a.kind.cmp(&b.kind).then(a.site.cmp(&b.site)));
    let mesh_id = format!("synth-{}", params.seed);
    let truth = SynthTruth {
        labels,
        body_vertices,
        landmarks: LandmarkSet {
            mesh_id: mesh_id.clone(),
            config: detection,
            groups,
        },
        annotations: AnnotationSet {
            mesh_id,
            groups: annotations,
        },
        tips,
        centerlines,
    };
    Ok((mesh, truth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn sphere_vertices_on_radius() {
        let m = make_primitive_sphere(1.0, 3).unwrap();
        for v in &m.vertices {
            assert!((v.coords.norm() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn box_has_exact_corners() {
        let m = make_primitive_box(1.0, 2.0, 3.0).unwrap();
        assert_eq!(m.vertices.len(), 8);
        assert!(m.vertices.contains(&point![0.5, 1.0, 1.5]));
        assert!((m.signed_volume() - 6.0).abs() < 1e-9);
    }

    #[test]
    fn cylinder_volume_near_analytic() {
        let m = make_primitive(PrimitiveKind::Cylinder, [1.0, 2.0, 0.0], 3).unwrap();
        let analytic = 2.0 * std::f64::consts::PI;
        assert!((m.signed_volume() - analytic).abs() < 0.02 * analytic);
    }

    #[test]
    fn primitives_are_closed_and_outward() {
        let all: Vec<TriMesh> = vec![
            make_primitive_sphere(2.0, 2).unwrap(),
            make_primitive_box(1.0, 2.0, 3.0).unwrap(),
            make_primitive_cylinder(1.5, 4.0, 24, 4).unwrap(),
            make_primitive_torus_section(10.0, 1.5, 90.0, 24, 12).unwrap(),
        ];
        for m in &all {
            let faces: Vec<usize> = (0..m.faces.len()).collect();
            assert!(m.boundary_edges(&faces).is_empty());
            assert!(m.signed_volume() > 0.0);
        }
    }

    #[test]
    fn low_resolution_rejected() {
        let err = make_primitive(PrimitiveKind::Cylinder, [1.0, 2.0, 0.0], 2).unwrap_err();
        assert!(matches!(err, SldError::Parameter(_)));
    }

    #[test]
    fn vertebra_is_watertight_with_full_truth() {
        let (m, truth) = make_synthetic_vertebra(&SynthParams {
            resolution: 1.5,
            ..Default::default()
        })
        .unwrap();
        let faces: Vec<usize> = (0..m.faces.len()).collect();
        assert!(m.boundary_edges(&faces).is_empty());
        assert!(m.signed_volume() > 0.0);
        let distinct: BTreeSet<SegmentLabel> = truth.labels.iter().copied().collect();
        assert_eq!(distinct.len(), 9);
        assert_eq!(truth.landmarks.groups.len(), 15);
        // every truth landmark lies on the surface
        let surface = SurfaceIndex::over_all_faces(&m);
        for g in &truth.landmarks.groups {
            for p in &g.points {
                assert!(surface.distance(p) < 1e-6, "{:?} {:?}", g.kind, g.site);
            }
        }
        // every annotation patch is non-empty
        for g in &truth.annotations.groups {
            assert!(!g.patch_vertices.is_empty(), "{:?} {:?}", g.kind, g.site);
        }
    }

    #[test]
    fn mirror_symmetry_within_tolerance() {
        let (m, _) = make_synthetic_vertebra(&SynthParams {
            resolution: 2.0,
            ..Default::default()
        })
        .unwrap();
        let mut original: Vec<[f64; 3]> = m.vertices.iter().map(|p| [p.x, p.y, p.z]).collect();
        let mut mirrored: Vec<[f64; 3]> = m.vertices.iter().map(|p| [-p.x, p.y, p.z]).collect();
        let key = |a: &[f64; 3]| (a[0], a[1], a[2]);
        original.sort_by(|a, b| key(a).partial_cmp(&key(b)).unwrap());
        mirrored.sort_by(|a, b| key(a).partial_cmp(&key(b)).unwrap());
        for (a, b) in original.iter().zip(&mirrored) {
            for c in 0..3 {
                assert!((a[c] - b[c]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn noise_is_bounded_and_seeded() {
        let base = SynthParams {
            resolution: 2.0,
            ..Default::default()
        };
        let (clean, _) = make_synthetic_vertebra(&base).unwrap();
        let noisy_params = SynthParams {
            noise_amplitude: 0.1,
            ..base.clone()
        };
        let (noisy, _) = make_synthetic_vertebra(&noisy_params).unwrap();
        assert_eq!(clean.vertices.len(), noisy.vertices.len());
        for (a, b) in clean.vertices.iter().zip(&noisy.vertices) {
            assert!((a - b).norm() <= 0.1 + 1e-12);
        }
        // same seed reproduces bitwise
        let (noisy2, _) = make_synthetic_vertebra(&noisy_params).unwrap();
        assert_eq!(noisy.vertices, noisy2.vertices);
    }

    #[test]
    fn ablation_removes_truth_groups() {
        let (m, truth) = make_synthetic_vertebra(&SynthParams {
            resolution: 2.0,
            omit_parts: vec![SegmentLabel::SpinousProcess],
            ..Default::default()
        })
        .unwrap();
        assert!(!m.vertices.is_empty());
        assert!(truth.landmarks.groups.iter().all(|g| !matches!(
            g.kind,
            LigamentKind::Ssl | LigamentKind::Isl | LigamentKind::Lf
        )));
    }

    #[test]
    fn bad_params_rejected() {
        let err = make_synthetic_vertebra(&SynthParams {
            articular_radius: 20.0,
            ..Default::default()
        })
        .unwrap_err();
        assert!(matches!(err, SldError::Parameter(_)));
        let err = make_synthetic_vertebra(&SynthParams {
            resolution: 0.05,
            ..Default::default()
        })
        .unwrap_err();
        assert!(matches!(err, SldError::Parameter(_)));
    }
}
