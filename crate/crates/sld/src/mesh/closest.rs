//! Closest-point queries against a triangle set, with a uniform-grid
//! acceleration structure for repeated lookups.

use nalgebra::{Point3, Vector3};

use crate::mesh::TriMesh;

/// Closest point on triangle (a, b, c) to p (Ericson, Real-Time Collision
/// Detection, 5.1.5).
pub fn closest_point_on_triangle(
    p: &Point3<f64>,
    a: &Point3<f64>,
    b: &Point3<f64>,
    c: &Point3<f64>,
) -> Point3<f64> {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return a + ab * v;
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return a + ac * w;
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}

pub fn point_triangle_distance(
    p: &Point3<f64>,
    a: &Point3<f64>,
    b: &Point3<f64>,
    c: &Point3<f64>,
) -> f64 {
    (p - closest_point_on_triangle(p, a, b, c)).norm()
}

/// Uniform grid over a fixed triangle subset for nearest-surface queries.
pub struct SurfaceIndex<'a> {
    mesh: &'a TriMesh,
    faces: Vec<usize>,
    min: Vector3<f64>,
    cell: f64,
    dims: [usize; 3],
    cells: Vec<Vec<usize>>,
}

impl<'a> SurfaceIndex<'a> {
    pub fn new(mesh: &'a TriMesh, face_subset: &[usize]) -> Self {
        let mut faces: Vec<usize> = face_subset.to_vec();
        faces.sort_unstable();
        faces.dedup();
        assert!(!faces.is_empty(), "SurfaceIndex needs at least one face");

        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for &fi in &faces {
            for &v in &mesh.faces[fi] {
                lo = lo.inf(&mesh.vertices[v].coords);
                hi = hi.sup(&mesh.vertices[v].coords);
            }
        }
        let extent = hi - lo;
        let target_cells = (faces.len() as f64).cbrt().ceil().max(1.0);
        let cell = (extent.max() / target_cells).max(1e-6);
        let dims = [
            ((extent.x / cell).ceil() as usize + 1).max(1),
            ((extent.y / cell).ceil() as usize + 1).max(1),
            ((extent.z / cell).ceil() as usize + 1).max(1),
        ];
        let mut cells = vec![Vec::new(); dims[0] * dims[1] * dims[2]];
        for &fi in &faces {
            let mut flo = Vector3::repeat(f64::INFINITY);
            let mut fhi = Vector3::repeat(f64::NEG_INFINITY);
            for &v in &mesh.faces[fi] {
                flo = flo.inf(&mesh.vertices[v].coords);
                fhi = fhi.sup(&mesh.vertices[v].coords);
            }
            let cl = Self::clamp_cell(&((flo - lo) / cell), &dims);
            let ch = Self::clamp_cell(&((fhi - lo) / cell), &dims);
            for x in cl[0]..=ch[0] {
                for y in cl[1]..=ch[1] {
                    for z in cl[2]..=ch[2] {
                        cells[(x * dims[1] + y) * dims[2] + z].push(fi);
                    }
                }
            }
        }
        SurfaceIndex {
            mesh,
            faces,
            min: lo,
            cell,
            dims,
            cells,
        }
    }

    pub fn over_all_faces(mesh: &'a TriMesh) -> Self {
        let all: Vec<usize> = (0..mesh.faces.len()).collect();
        Self::new(mesh, &all)
    }

    fn clamp_cell(v: &Vector3<f64>, dims: &[usize; 3]) -> [usize; 3] {
        [
            (v.x.floor().max(0.0) as usize).min(dims[0] - 1),
            (v.y.floor().max(0.0) as usize).min(dims[1] - 1),
            (v.z.floor().max(0.0) as usize).min(dims[2] - 1),
        ]
    }

    /// Closest surface point and its face index; expands the searched cell
    /// ring until no closer face can exist.
    pub fn closest_point(&self, p: &Point3<f64>) -> (Point3<f64>, usize, f64) {
        let rel = (p.coords - self.min) / self.cell;
        let center = Self::clamp_cell(&rel, &self.dims);
        let mut best_dist = f64::INFINITY;
        let mut best_point = *p;
        let mut best_face = self.faces[0];
        let max_ring = *self.dims.iter().max().unwrap();
        for ring in 0..=max_ring {
            if best_dist < (ring as f64 - 1.0) * self.cell {
                break;
            }
            let mut any_cell = false;
            for x in center[0].saturating_sub(ring)..=(center[0] + ring).min(self.dims[0] - 1) {
                for y in center[1].saturating_sub(ring)..=(center[1] + ring).min(self.dims[1] - 1) {
                    for z in
                        center[2].saturating_sub(ring)..=(center[2] + ring).min(self.dims[2] - 1)
                    {
                        // only the shell of the ring
                        let on_shell = ring == 0
                            || x == center[0].saturating_sub(ring)
                            || x == (center[0] + ring).min(self.dims[0] - 1)
                            || y == center[1].saturating_sub(ring)
                            || y == (center[1] + ring).min(self.dims[1] - 1)
                            || z == center[2].saturating_sub(ring)
                            || z == (center[2] + ring).min(self.dims[2] - 1);
                        if !on_shell {
                            continue;
                        }
                        any_cell = true;
                        for &fi in &self.cells[(x * self.dims[1] + y) * self.dims[2] + z] {
                            let [a, b, c] = self.mesh.faces[fi];
                            let q = closest_point_on_triangle(
                                p,
                                &self.mesh.vertices[a],
                                &self.mesh.vertices[b],
                                &self.mesh.vertices[c],
                            );
                            let d = (p - q).norm();
                            if d < best_dist || (d == best_dist && fi < best_face) {
                                best_dist = d;
                                best_point = q;
                                best_face = fi;
                            }
                        }
                    }
                }
            }
            if !any_cell && best_dist.is_finite() {
                break;
            }
        }
        (best_point, best_face, best_dist)
    }

    pub fn distance(&self, p: &Point3<f64>) -> f64 {
        self.closest_point(p).2
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::point;
    use rand::{Rng, SeedableRng};

    #[test]
    fn closest_point_matches_brute_force() {
        let mesh = crate::synth::make_primitive_sphere(2.0, 2).unwrap();
        let index = SurfaceIndex::over_all_faces(&mesh);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let p = point![
                rng.gen_range(-4.0..4.0),
                rng.gen_range(-4.0..4.0),
                rng.gen_range(-4.0..4.0)
            ];
            let brute = (0..mesh.faces.len())
                .map(|fi| {
                    let [a, b, c] = mesh.faces[fi];
                    point_triangle_distance(
                        &p,
                        &mesh.vertices[a],
                        &mesh.vertices[b],
                        &mesh.vertices[c],
                    )
                })
                .fold(f64::INFINITY, f64::min);
            assert!((index.distance(&p) - brute).abs() < 1e-9);
        }
    }

    #[test]
    fn point_above_square_patch() {
        let a = point![-1.0, -1.0, 0.0];
        let b = point![1.0, -1.0, 0.0];
        let c = point![0.0, 1.0, 0.0];
        assert!((point_triangle_distance(&point![0.0, 0.0, 1.0], &a, &b, &c) - 1.0).abs() < 1e-12);
    }
}
