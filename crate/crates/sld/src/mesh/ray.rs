//! Ray-surface intersection over a face subset (Möller–Trumbore).

use nalgebra::{Point3, Vector3};

use crate::error::{Result, SldError};
use crate::mesh::TriMesh;

const T_TIE_EPS: f64 = 1e-12;

/// Nearest hit with positive ray parameter, or None on a miss. Ties within
/// 1e-12 on the ray parameter go to the smallest face index (faces are
/// scanned ascending).
pub fn ray_surface_intersection(
    mesh: &TriMesh,
    face_subset: &[usize],
    origin: &Point3<f64>,
    direction: &Vector3<f64>,
) -> Result<Option<Point3<f64>>> {
    if (direction.norm() - 1.0).abs() > 1e-9 {
        return Err(SldError::Parameter(format!(
            "ray direction must be unit length, got norm {}",
            direction.norm()
        )));
    }
    let mut sorted: Vec<usize> = face_subset.to_vec();
    sorted.sort_unstable();
    sorted.dedup();

    let mut best: Option<(f64, Point3<f64>)> = None;
    for &fi in &sorted {
        let [a, b, c] = mesh.faces[fi];
        if let Some(t) = ray_triangle(
            origin,
            direction,
            &mesh.vertices[a],
            &mesh.vertices[b],
            &mesh.vertices[c],
        ) {
            match best {
                Some((bt, _)) if t >= bt - T_TIE_EPS => {} // keep earlier (smaller face index on ties)
                _ => best = Some((t, origin + direction * t)),
            }
        }
    }
    Ok(best.map(|(_, p)| p))
}

fn ray_triangle(
    origin: &Point3<f64>,
    dir: &Vector3<f64>,
    a: &Point3<f64>,
    b: &Point3<f64>,
    c: &Point3<f64>,
) -> Option<f64> {
    let e1 = b - a;
    let e2 = c - a;
    let pvec = dir.cross(&e2);
    let det = e1.dot(&pvec);
    if det.abs() < 1e-14 {
        return None;
    }
    let inv_det = 1.0 / det;
    let tvec = origin - a;
    let u = tvec.dot(&pvec) * inv_det;
    // small slack so rays through shared edges still register a hit
    if !(-1e-12..=1.0 + 1e-12).contains(&u) {
        return None;
    }
    let qvec = tvec.cross(&e1);
    let v = dir.dot(&qvec) * inv_det;
    if v < -1e-12 || u + v > 1.0 + 1e-12 {
        return None;
    }
    let t = e2.dot(&qvec) * inv_det;
    (t > T_TIE_EPS).then_some(t)
}
