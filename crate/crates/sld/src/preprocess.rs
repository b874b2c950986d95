//! Mesh conditioning and anatomical frame extraction.
//!
//! The anatomical frame comes from PCA over vertex positions. PCA alone
//! cannot resolve anatomical signs, so eigenvectors are mapped to anatomy
//! with an orientation hint: by default meshes are assumed to be in an
//! approximately canonical scanner orientation (superior toward +Z,
//! anterior toward -Y), overridable via [`FrameHint`].

use nalgebra::{Matrix3, Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SldError};
use crate::mesh::TriMesh;

/// Orthonormal right-handed anatomical axes plus origin (mesh centroid).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VertebraFrame {
    pub origin: Point3<f64>,
    /// Longitudinal axis, toward superior.
    pub longitudinal: Vector3<f64>,
    /// Anterior-posterior axis, toward anterior.
    pub anterior: Vector3<f64>,
    /// Left-right axis, toward the anatomical left; completes the
    /// right-handed triad `left x anterior = longitudinal`.
    pub left: Vector3<f64>,
}

/// Orientation convention used to sign the PCA axes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub enum FrameHint {
    /// Superior +Z, anterior -Y.
    #[default]
    Lps,
    /// Superior +Z, anterior +Y.
    Ras,
    /// Explicit hint directions for (longitudinal, anterior).
    Custom {
        longitudinal: [f64; 3],
        anterior: [f64; 3],
    },
}

impl FrameHint {
    fn directions(&self) -> (Vector3<f64>, Vector3<f64>) {
        match self {
            FrameHint::Lps => (Vector3::z(), -Vector3::y()),
            FrameHint::Ras => (Vector3::z(), Vector3::y()),
            FrameHint::Custom {
                longitudinal,
                anterior,
            } => (
                Vector3::from(*longitudinal).normalize(),
                Vector3::from(*anterior).normalize(),
            ),
        }
    }
}

impl VertebraFrame {
    pub fn validate(&self) -> Result<()> {
        let tol = 1e-9;
        for (name, axis) in [
            ("longitudinal", self.longitudinal),
            ("anterior", self.anterior),
            ("left", self.left),
        ] {
            if (axis.norm() - 1.0).abs() > tol {
                return Err(SldError::Validation(format!(
                    "{name} axis is not unit length"
                )));
            }
        }
        if self.longitudinal.dot(&self.anterior).abs() > tol
            || self.longitudinal.dot(&self.left).abs() > tol
            || self.anterior.dot(&self.left).abs() > tol
        {
            return Err(SldError::Validation("frame axes not orthogonal".into()));
        }
        if (self.left.cross(&self.anterior) - self.longitudinal).norm() > tol {
            return Err(SldError::Validation("frame is not right-handed".into()));
        }
        Ok(())
    }

    /// Flip the anterior axis by 180 degrees, keeping the triad right-handed.
    pub fn flipped_anterior(&self) -> VertebraFrame {
        VertebraFrame {
            origin: self.origin,
            longitudinal: self.longitudinal,
            anterior: -self.anterior,
            left: -self.left,
        }
    }
}

/// Oriented bounding extents along the frame axes, in mm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dimensions {
    pub extent_longitudinal: f64,
    pub extent_anterior_posterior: f64,
    pub extent_left_right: f64,
    pub mean_edge_length: f64,
}

/// PCA-based anatomical frame. Errors when the covariance is degenerate
/// (coplanar vertices) or isotropic enough that axes are ambiguous.
pub fn estimate_frame(mesh: &TriMesh, hint: FrameHint) -> Result<VertebraFrame> {
    let n = mesh.vertices.len();
    if n < 4 {
        return Err(SldError::DegenerateGeometry(
            "frame estimation needs at least 4 vertices".into(),
        ));
    }
    let centroid = mesh.centroid();
    let mut cov = Matrix3::zeros();
    for p in &mesh.vertices {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    cov /= n as f64;

    let eigen = cov.symmetric_eigen();
    let mut pairs: Vec<(f64, Vector3<f64>)> = (0..3)
        .map(|i| {
            (
                eigen.eigenvalues[i],
                eigen.eigenvectors.column(i).into_owned(),
            )
        })
        .collect();
    pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let max_ev = pairs[0].0;
    if max_ev <= 0.0 || pairs[2].0 / max_ev < 1e-9 {
        return Err(SldError::DegenerateGeometry(
            "coplanar or collapsed vertex distribution".into(),
        ));
    }
    // near-equal eigenvalues leave the axes arbitrary
    for w in pairs.windows(2) {
        if (w[0].0 - w[1].0) / max_ev < 1e-9 {
            return Err(SldError::DegenerateGeometry(
                "isotropic covariance: principal axes are ambiguous".into(),
            ));
        }
    }

    let (hint_long, hint_ant) = hint.directions();
    // longitudinal = eigenvector most aligned with the hint, signed toward it
    let (li, _) = pairs
        .iter()
        .enumerate()
        .max_by(|a, b| {
            let da = a.1 .1.dot(&hint_long).abs();
            let db = b.1 .1.dot(&hint_long).abs();
            da.partial_cmp(&db).unwrap()
        })
        .unwrap();
    let mut longitudinal = pairs[li].1;
    if longitudinal.dot(&hint_long) < 0.0 {
        longitudinal = -longitudinal;
    }
    let remaining: Vec<Vector3<f64>> = pairs
        .iter()
        .enumerate()
        .filter_map(|(i, p)| (i != li).then_some(p.1))
        .collect();
    let mut anterior = *remaining
        .iter()
        .max_by(|a, b| {
            a.dot(&hint_ant)
                .abs()
                .partial_cmp(&b.dot(&hint_ant).abs())
                .unwrap()
        })
        .unwrap();
    if anterior.dot(&hint_ant) < 0.0 {
        anterior = -anterior;
    }
    // exact orthonormalization; eigenvectors are orthogonal only to solver precision
    longitudinal = longitudinal.normalize();
    anterior = (anterior - longitudinal * anterior.dot(&longitudinal)).normalize();
    let left = anterior.cross(&longitudinal);

    let frame = VertebraFrame {
        origin: centroid,
        longitudinal,
        anterior,
        left,
    };
    frame.validate()?;
    Ok(frame)
}

pub fn dimensions(mesh: &TriMesh, frame: &VertebraFrame) -> Dimensions {
    let extent = |axis: &Vector3<f64>| {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for p in &mesh.vertices {
            let s = p.coords.dot(axis);
            lo = lo.min(s);
            hi = hi.max(s);
        }
        hi - lo
    };
    Dimensions {
        extent_longitudinal: extent(&frame.longitudinal),
        extent_anterior_posterior: extent(&frame.anterior),
        extent_left_right: extent(&frame.left),
        mean_edge_length: mesh.mean_edge_length(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SmoothMethod {
    Laplacian,
    Taubin,
}

/// Laplacian or Taubin smoothing. Taubin alternates an inflate step with
/// factor `-1.02 * lambda` to limit shrinkage. Topology is unchanged.
pub fn smooth(
    mesh: &TriMesh,
    iterations: usize,
    method: SmoothMethod,
    lambda: f64,
) -> Result<TriMesh> {
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(SldError::Parameter(format!(
            "smoothing lambda must be in (0, 1], got {lambda}"
        )));
    }
    if iterations == 0 {
        return Ok(mesh.clone());
    }
    let adj = mesh.vertex_adjacency();
    let mut positions = mesh.vertices.clone();
    let step = |positions: &[Point3<f64>], factor: f64| -> Vec<Point3<f64>> {
        positions
            .iter()
            .enumerate()
            .map(|(v, p)| {
                let ns = &adj.neighbors[v];
                if ns.is_empty() {
                    return *p;
                }
                let avg: Vector3<f64> = ns
                    .iter()
                    .map(|&u| positions[u].coords)
                    .sum::<Vector3<f64>>()
                    / ns.len() as f64;
                p + (avg - p.coords) * factor
            })
            .collect()
    };
    for _ in 0..iterations {
        positions = step(&positions, lambda);
        if method == SmoothMethod::Taubin {
            positions = step(&positions, -lambda * 1.02);
        }
    }
    let mut out = mesh.clone();
    out.vertices = positions;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{point, Rotation3};

    #[test]
    fn frame_of_axis_aligned_box() {
        // LR x AP x L proportions of a vertebra
        let m = crate::synth::make_primitive_box(30.0, 40.0, 20.0).unwrap();
        let f = estimate_frame(&m, FrameHint::Lps).unwrap();
        assert!((f.longitudinal - Vector3::z()).norm() < 1e-6);
        assert!((f.anterior + Vector3::y()).norm() < 1e-6);
        let d = dimensions(&m, &f);
        assert!((d.extent_left_right - 30.0).abs() < 1e-9);
        assert!((d.extent_anterior_posterior - 40.0).abs() < 1e-9);
        assert!((d.extent_longitudinal - 20.0).abs() < 1e-9);
    }

    #[test]
    fn frame_equivariant_under_rotation() {
        let m = crate::synth::make_primitive_box(30.0, 40.0, 20.0).unwrap();
        let f0 = estimate_frame(&m, FrameHint::Lps).unwrap();
        let rot = Rotation3::from_euler_angles(0.15, -0.1, 0.2);
        let mut rotated = m.clone();
        for p in &mut rotated.vertices {
            *p = rot * *p;
        }
        // hint rotated along with the mesh so sign disambiguation is unambiguous
        let hint = FrameHint::Custom {
            longitudinal: (rot * Vector3::z()).into(),
            anterior: (rot * -Vector3::y()).into(),
        };
        let f1 = estimate_frame(&rotated, hint).unwrap();
        assert!((f1.longitudinal - rot * f0.longitudinal).norm() < 1e-6);
        assert!((f1.anterior - rot * f0.anterior).norm() < 1e-6);
        assert!((f1.left - rot * f0.left).norm() < 1e-6);
    }

    #[test]
    fn sphere_frame_is_degenerate() {
        let m = crate::synth::make_primitive_sphere(1.0, 2).unwrap();
        assert!(matches!(
            estimate_frame(&m, FrameHint::Lps),
            Err(SldError::DegenerateGeometry(_))
        ));
    }

    #[test]
    fn dimensions_translation_invariant() {
        let m = crate::synth::make_primitive_box(3.0, 5.0, 2.0).unwrap();
        let f = estimate_frame(&m, FrameHint::Lps).unwrap();
        let d0 = dimensions(&m, &f);
        let mut shifted = m.clone();
        for p in &mut shifted.vertices {
            *p += Vector3::new(10.0, -3.0, 7.0);
        }
        let f1 = estimate_frame(&shifted, FrameHint::Lps).unwrap();
        let d1 = dimensions(&shifted, &f1);
        assert!((d0.extent_longitudinal - d1.extent_longitudinal).abs() < 1e-9);
        assert!((d0.extent_anterior_posterior - d1.extent_anterior_posterior).abs() < 1e-9);
        assert!((d0.extent_left_right - d1.extent_left_right).abs() < 1e-9);
    }

    #[test]
    fn zero_iterations_is_identity() {
        let m = crate::synth::make_primitive_sphere(1.0, 2).unwrap();
        let s = smooth(&m, 0, SmoothMethod::Taubin, 0.5).unwrap();
        assert_eq!(m.vertices, s.vertices);
    }

    #[test]
    fn invalid_lambda_rejected() {
        let m = crate::synth::make_primitive_sphere(1.0, 1).unwrap();
        assert!(smooth(&m, 1, SmoothMethod::Laplacian, 0.0).is_err());
        assert!(smooth(&m, 1, SmoothMethod::Laplacian, 1.5).is_err());
    }

    #[test]
    fn plane_mesh_stays_planar() {
        // flat grid in z = 0
        let mut vertices = Vec::new();
        let mut faces = Vec::new();
        let n = 6;
        for i in 0..n {
            for j in 0..n {
                vertices.push(point![i as f64, j as f64, 0.0]);
            }
        }
        for i in 0..n - 1 {
            for j in 0..n - 1 {
                let v = |a: usize, b: usize| a * n + b;
                faces.push([v(i, j), v(i + 1, j), v(i, j + 1)]);
                faces.push([v(i + 1, j), v(i + 1, j + 1), v(i, j + 1)]);
            }
        }
        let m = TriMesh::new(vertices, faces).unwrap();
        for method in [SmoothMethod::Laplacian, SmoothMethod::Taubin] {
            let s = smooth(&m, 10, method, 0.5).unwrap();
            for p in &s.vertices {
                assert!(p.z.abs() < 1e-9);
            }
        }
    }

    #[test]
    fn taubin_denoises_sphere() {
        use rand::{Rng, SeedableRng};
        let m = crate::synth::make_primitive_sphere(1.0, 3).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut noisy = m.clone();
        for p in &mut noisy.vertices {
            let dir = p.coords.normalize();
            *p += dir * rng.gen_range(-0.02..0.02);
        }
        let rms = |mesh: &TriMesh| {
            let s: f64 = mesh
                .vertices
                .iter()
                .map(|p| (p.coords.norm() - 1.0).powi(2))
                .sum::<f64>()
                / mesh.vertices.len() as f64;
            s.sqrt()
        };
        let before = rms(&noisy);
        let after = rms(&smooth(&noisy, 20, SmoothMethod::Taubin, 0.5).unwrap());
        assert!(after < before * 0.5, "rms before {before}, after {after}");
    }

    #[test]
    fn taubin_volume_guard() {
        let m = crate::synth::make_primitive_sphere(10.0, 3).unwrap();
        let v0 = m.signed_volume();
        let s = smooth(&m, 50, SmoothMethod::Taubin, 0.5).unwrap();
        let v1 = s.signed_volume();
        assert!((v1 - v0).abs() / v0.abs() < 0.05);
    }
}
