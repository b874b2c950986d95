//! Indexed triangle mesh: the substrate every pipeline stage operates on.
//!
//! Meshes are immutable after construction; all queries here are read-only
//! and safe to share across threads.

pub mod closest;
pub mod geodesic;
pub mod io;
pub mod ray;
pub mod section;

use nalgebra::{Point3, Unit, Vector3};

use crate::error::{Result, SldError};

/// Area below which a triangle counts as degenerate, in mm^2.
pub const MIN_FACE_AREA: f64 = 1e-12;

/// Indexed triangle surface mesh with coordinates in millimeters.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Point3<f64>>,
    pub faces: Vec<[usize; 3]>,
    /// Optional per-vertex integer labels (segmentation export).
    pub labels: Option<Vec<i32>>,
}

/// Oriented plane through `point` with unit `normal`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    pub point: Point3<f64>,
    pub normal: Vector3<f64>,
}

impl Plane {
    pub fn new(point: Point3<f64>, normal: Vector3<f64>) -> Result<Self> {
        let n = normal.norm();
        if (n - 1.0).abs() > 1e-9 {
            return Err(SldError::Parameter(format!(
                "plane normal must be unit length, got norm {n}"
            )));
        }
        Ok(Plane { point, normal })
    }

    pub fn from_point_direction(point: Point3<f64>, direction: Vector3<f64>) -> Result<Self> {
        let n = Unit::try_new(direction, 1e-12)
            .ok_or_else(|| SldError::Parameter("zero-length plane normal".into()))?;
        Ok(Plane {
            point,
            normal: n.into_inner(),
        })
    }

    /// Signed distance of `p` from the plane along the normal.
    pub fn signed_distance(&self, p: &Point3<f64>) -> f64 {
        (p - self.point).dot(&self.normal)
    }
}

/// Ordered polyline of at least two distinct consecutive points.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyline {
    pub points: Vec<Point3<f64>>,
}

impl Polyline {
    pub fn new(points: Vec<Point3<f64>>) -> Result<Self> {
        if points.len() < 2 {
            return Err(SldError::Validation(
                "polyline needs at least 2 points".into(),
            ));
        }
        for w in points.windows(2) {
            if w[0] == w[1] {
                return Err(SldError::Validation(
                    "polyline has coincident consecutive points".into(),
                ));
            }
        }
        Ok(Polyline { points })
    }

    pub fn length(&self) -> f64 {
        self.points.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
    }

    pub fn is_closed(&self, tol: f64) -> bool {
        let first = self.points.first().unwrap();
        let last = self.points.last().unwrap();
        (last - first).norm() <= tol
    }

    /// Resample to `n` points equidistant by arc length, endpoints included.
    ///
    /// `n = 1` returns the midpoint by arc length; `n = 2` the endpoints.
    pub fn resample(&self, n: usize) -> Vec<Point3<f64>> {
        assert!(n >= 1);
        let total = self.length();
        if n == 1 {
            return vec![self.point_at(total / 2.0)];
        }
        (0..n)
            .map(|i| self.point_at(total * i as f64 / (n - 1) as f64))
            .collect()
    }

    /// Point at arc-length parameter `s` from the start (clamped).
    pub fn point_at(&self, s: f64) -> Point3<f64> {
        let mut remaining = s.max(0.0);
        for w in self.points.windows(2) {
            let seg = w[1] - w[0];
            let len = seg.norm();
            if remaining <= len {
                return w[0] + seg * (remaining / len);
            }
            remaining -= len;
        }
        *self.points.last().unwrap()
    }

    /// Minimal distance from `p` to any segment of the polyline.
    pub fn distance_to_point(&self, p: &Point3<f64>) -> f64 {
        self.points
            .windows(2)
            .map(|w| {
                let seg = w[1] - w[0];
                let t = (p - w[0]).dot(&seg) / seg.norm_squared();
                let q = w[0] + seg * t.clamp(0.0, 1.0);
                (p - q).norm()
            })
            .fold(f64::INFINITY, f64::min)
    }
}

/// Per-vertex neighbor lists, sorted ascending.
#[derive(Debug, Clone)]
pub struct VertexAdjacency {
    pub neighbors: Vec<Vec<usize>>,
}

impl TriMesh {
    pub fn new(vertices: Vec<Point3<f64>>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let mesh = TriMesh {
            vertices,
            faces,
            labels: None,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn with_labels(mut self, labels: Vec<i32>) -> Result<Self> {
        if labels.len() != self.vertices.len() {
            return Err(SldError::Validation(format!(
                "label count {} does not match vertex count {}",
                labels.len(),
                self.vertices.len()
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.vertices.is_empty() || self.faces.is_empty() {
            return Err(SldError::Validation("empty mesh".into()));
        }
        for (fi, f) in self.faces.iter().enumerate() {
            for &v in f {
                if v >= self.vertices.len() {
                    return Err(SldError::Validation(format!(
                        "face {fi} references vertex {v} but mesh has {} vertices",
                        self.vertices.len()
                    )));
                }
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(SldError::Validation(format!(
                    "face {fi} references the same vertex twice"
                )));
            }
        }
        Ok(())
    }

    pub fn face_area(&self, fi: usize) -> f64 {
        let [a, b, c] = self.faces[fi];
        let ab = self.vertices[b] - self.vertices[a];
        let ac = self.vertices[c] - self.vertices[a];
        ab.cross(&ac).norm() * 0.5
    }

    pub fn face_centroid(&self, fi: usize) -> Point3<f64> {
        let [a, b, c] = self.faces[fi];
        Point3::from(
            (self.vertices[a].coords + self.vertices[b].coords + self.vertices[c].coords) / 3.0,
        )
    }

    pub fn centroid(&self) -> Point3<f64> {
        let sum: Vector3<f64> = self.vertices.iter().map(|p| p.coords).sum();
        Point3::from(sum / self.vertices.len() as f64)
    }

    /// One unit normal per face, from the winding-order cross product.
    pub fn face_normals(&self) -> Result<Vec<Vector3<f64>>> {
        self.faces
            .iter()
            .enumerate()
            .map(|(fi, &[a, b, c])| {
                let ab = self.vertices[b] - self.vertices[a];
                let ac = self.vertices[c] - self.vertices[a];
                let cross = ab.cross(&ac);
                let norm = cross.norm();
                if norm * 0.5 <= MIN_FACE_AREA {
                    return Err(SldError::SingularGeometry(format!(
                        "face {fi} has zero area"
                    )));
                }
                Ok(cross / norm)
            })
            .collect()
    }

    pub fn vertex_adjacency(&self) -> VertexAdjacency {
        let mut neighbors: Vec<Vec<usize>> = vec![Vec::new(); self.vertices.len()];
        for &[a, b, c] in &self.faces {
            for (u, v) in [(a, b), (b, c), (c, a)] {
                neighbors[u].push(v);
                neighbors[v].push(u);
            }
        }
        for list in &mut neighbors {
            list.sort_unstable();
            list.dedup();
        }
        VertexAdjacency { neighbors }
    }

    /// Undirected unique edges as (min, max) pairs, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut edges: Vec<(usize, usize)> = self
            .faces
            .iter()
            .flat_map(|&[a, b, c]| [(a, b), (b, c), (c, a)])
            .map(|(u, v)| (u.min(v), u.max(v)))
            .collect();
        edges.sort_unstable();
        edges.dedup();
        edges
    }

    pub fn mean_edge_length(&self) -> f64 {
        let edges = self.edges();
        if edges.is_empty() {
            return 0.0;
        }
        let total: f64 = edges
            .iter()
            .map(|&(u, v)| (self.vertices[v] - self.vertices[u]).norm())
            .sum();
        total / edges.len() as f64
    }

    /// Connected components of `vertex_subset` under edge connectivity
    /// restricted to the subset, sorted by size descending then smallest
    /// contained index ascending. Each component is sorted ascending.
    pub fn connected_components(&self, vertex_subset: &[usize]) -> Vec<Vec<usize>> {
        let adj = self.vertex_adjacency();
        self.connected_components_with(&adj, vertex_subset)
    }

    pub fn connected_components_with(
        &self,
        adj: &VertexAdjacency,
        vertex_subset: &[usize],
    ) -> Vec<Vec<usize>> {
        let mut in_subset = vec![false; self.vertices.len()];
        for &v in vertex_subset {
            in_subset[v] = true;
        }
        let mut visited = vec![false; self.vertices.len()];
        let mut components = Vec::new();
        let mut sorted_subset: Vec<usize> = vertex_subset.to_vec();
        sorted_subset.sort_unstable();
        sorted_subset.dedup();
        for &start in &sorted_subset {
            if visited[start] {
                continue;
            }
            let mut component = vec![start];
            visited[start] = true;
            let mut stack = vec![start];
            while let Some(v) = stack.pop() {
                for &u in &adj.neighbors[v] {
                    if in_subset[u] && !visited[u] {
                        visited[u] = true;
                        component.push(u);
                        stack.push(u);
                    }
                }
            }
            component.sort_unstable();
            components.push(component);
        }
        components.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
        components
    }

    /// Face-level connected components of `face_subset` under shared-edge
    /// adjacency, sorted by size descending then smallest face index.
    pub fn face_components(&self, face_subset: &[usize]) -> Vec<Vec<usize>> {
        use std::collections::HashMap;
        let mut edge_to_faces: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        for &fi in face_subset {
            let [a, b, c] = self.faces[fi];
            for (u, v) in [(a, b), (b, c), (c, a)] {
                edge_to_faces
                    .entry((u.min(v), u.max(v)))
                    .or_default()
                    .push(fi);
            }
        }
        let mut adj: HashMap<usize, Vec<usize>> = HashMap::new();
        for faces in edge_to_faces.values() {
            for &f in faces {
                for &g in faces {
                    if f != g {
                        adj.entry(f).or_default().push(g);
                    }
                }
            }
        }
        let mut sorted: Vec<usize> = face_subset.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        let mut visited = std::collections::HashSet::new();
        let mut components = Vec::new();
        for &start in &sorted {
            if visited.contains(&start) {
                continue;
            }
            let mut component = vec![start];
            visited.insert(start);
            let mut stack = vec![start];
            while let Some(f) = stack.pop() {
                if let Some(ns) = adj.get(&f) {
                    for &g in ns {
                        if visited.insert(g) {
                            component.push(g);
                            stack.push(g);
                        }
                    }
                }
            }
            component.sort_unstable();
            components.push(component);
        }
        components.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
        components
    }

    /// Boundary edges of a face subset: edges used by exactly one subset face.
    pub fn boundary_edges(&self, face_subset: &[usize]) -> Vec<(usize, usize)> {
        use std::collections::HashMap;
        let mut count: HashMap<(usize, usize), usize> = HashMap::new();
        for &fi in face_subset {
            let [a, b, c] = self.faces[fi];
            for (u, v) in [(a, b), (b, c), (c, a)] {
                *count.entry((u.min(v), u.max(v))).or_insert(0) += 1;
            }
        }
        let mut boundary: Vec<(usize, usize)> = count
            .into_iter()
            .filter_map(|(e, c)| (c == 1).then_some(e))
            .collect();
        boundary.sort_unstable();
        boundary
    }

    /// Chains boundary edges of a face subset into closed vertex loops.
    /// Returns loops sorted by polyline length descending. Boundary edges
    /// keep the orientation of the face that owns them, so in-degree equals
    /// out-degree at every vertex and loops always close, even at bowtie
    /// vertices where the patch boundary touches itself; there a loop may
    /// revisit the bowtie vertex.
    pub fn boundary_loops(&self, face_subset: &[usize]) -> Result<Vec<Vec<usize>>> {
        use std::collections::BTreeMap;
        use std::collections::HashMap;
        let mut count: HashMap<(usize, usize), (usize, (usize, usize))> = HashMap::new();
        for &fi in face_subset {
            let [a, b, c] = self.faces[fi];
            for (u, v) in [(a, b), (b, c), (c, a)] {
                let entry = count.entry((u.min(v), u.max(v))).or_insert((0, (u, v)));
                entry.0 += 1;
            }
        }
        let mut out: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (_, (c, (u, v))) in count {
            if c == 1 {
                out.entry(u).or_default().push(v);
            }
        }
        for ns in out.values_mut() {
            ns.sort_unstable();
        }
        let starts: Vec<usize> = out.keys().copied().collect();
        let mut loops = Vec::new();
        for start in starts {
            while out.get(&start).is_some_and(|ns| !ns.is_empty()) {
                let mut ring = Vec::new();
                let mut current = start;
                loop {
                    ring.push(current);
                    let ns = out.get_mut(&current).ok_or_else(|| {
                        SldError::DetectionFailure(format!(
                            "open boundary chain at vertex {current}"
                        ))
                    })?;
                    if ns.is_empty() {
                        return Err(SldError::DetectionFailure(format!(
                            "open boundary chain at vertex {current}"
                        )));
                    }
                    current = ns.remove(0);
                    if current == start {
                        break;
                    }
                }
                loops.push(ring);
            }
        }
        loops.sort_by(|a, b| {
            let la = self.loop_length(a);
            let lb = self.loop_length(b);
            lb.partial_cmp(&la).unwrap()
        });
        Ok(loops)
    }

    fn loop_length(&self, ring: &[usize]) -> f64 {
        let mut total = 0.0;
        for i in 0..ring.len() {
            let j = (i + 1) % ring.len();
            total += (self.vertices[ring[j]] - self.vertices[ring[i]]).norm();
        }
        total
    }

    /// Signed volume by the divergence theorem; meaningful for closed meshes.
    pub fn signed_volume(&self) -> f64 {
        self.faces
            .iter()
            .map(|&[a, b, c]| {
                let (pa, pb, pc) = (self.vertices[a], self.vertices[b], self.vertices[c]);
                pa.coords.dot(&pb.coords.cross(&pc.coords)) / 6.0
            })
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::point;

    fn tri() -> TriMesh {
        TriMesh::new(
            vec![
                point![0.0, 0.0, 0.0],
                point![1.0, 0.0, 0.0],
                point![0.0, 1.0, 0.0],
            ],
            vec![[0, 1, 2]],
        )
        .unwrap()
    }

    #[test]
    fn single_triangle_normal() {
        let n = tri().face_normals().unwrap();
        assert!((n[0] - Vector3::new(0.0, 0.0, 1.0)).norm() < 1e-12);
    }

    #[test]
    fn reversed_winding_flips_normal() {
        let m = TriMesh::new(tri().vertices, vec![[0, 2, 1]]).unwrap();
        let n = m.face_normals().unwrap();
        assert!((n[0] - Vector3::new(0.0, 0.0, -1.0)).norm() < 1e-12);
    }

    #[test]
    fn zero_area_face_is_singular() {
        let m = TriMesh::new(
            vec![
                point![0.0, 0.0, 0.0],
                point![1.0, 0.0, 0.0],
                point![2.0, 0.0, 0.0],
            ],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let err = m.face_normals().unwrap_err();
        assert!(err.to_string().contains("face 0"));
    }

    #[test]
    fn degenerate_topological_face_rejected() {
        let err = TriMesh::new(
            vec![point![0.0, 0.0, 0.0], point![1.0, 0.0, 0.0]],
            vec![[0, 1, 0]],
        )
        .unwrap_err();
        assert!(err.to_string().contains("same vertex twice"));
    }

    #[test]
    fn triangle_adjacency() {
        let adj = tri().vertex_adjacency();
        for v in 0..3 {
            assert_eq!(adj.neighbors[v].len(), 2);
        }
    }

    #[test]
    fn adjacency_symmetric_and_sorted() {
        let m = crate::synth::make_primitive_sphere(1.0, 2).unwrap();
        let adj = m.vertex_adjacency();
        for (v, ns) in adj.neighbors.iter().enumerate() {
            assert!(ns.windows(2).all(|w| w[0] < w[1]));
            for &u in ns {
                assert!(adj.neighbors[u].binary_search(&v).is_ok());
            }
        }
    }

    #[test]
    fn disconnected_triangles_have_two_components() {
        let m = TriMesh::new(
            vec![
                point![0.0, 0.0, 0.0],
                point![1.0, 0.0, 0.0],
                point![0.0, 1.0, 0.0],
                point![5.0, 0.0, 0.0],
                point![6.0, 0.0, 0.0],
                point![5.0, 1.0, 0.0],
            ],
            vec![[0, 1, 2], [3, 4, 5]],
        )
        .unwrap();
        let subset: Vec<usize> = (0..6).collect();
        let comps = m.connected_components(&subset);
        assert_eq!(comps.len(), 2);
        assert_eq!(comps[0].len(), 3);
        assert_eq!(comps[1].len(), 3);
        // no cross-component neighbors
        let adj = m.vertex_adjacency();
        for &v in &comps[0] {
            for &u in &adj.neighbors[v] {
                assert!(comps[0].contains(&u));
            }
        }
    }

    #[test]
    fn cube_vertex_degrees_sum_to_twice_edges() {
        let m = crate::synth::make_primitive_box(1.0, 1.0, 1.0).unwrap();
        let adj = m.vertex_adjacency();
        let degree_sum: usize = adj.neighbors.iter().map(|n| n.len()).sum();
        // brute-force edge count
        let mut edges = std::collections::HashSet::new();
        for &[a, b, c] in &m.faces {
            for (u, v) in [(a, b), (b, c), (c, a)] {
                edges.insert((u.min(v), u.max(v)));
            }
        }
        assert_eq!(degree_sum, 2 * edges.len());
        for ns in &adj.neighbors {
            assert!(ns.len() >= 3 && ns.len() <= 6);
        }
    }

    #[test]
    fn sphere_latitude_band_components() {
        let m = crate::synth::make_primitive_sphere(1.0, 3).unwrap();
        let band: Vec<usize> = (0..m.vertices.len())
            .filter(|&v| m.vertices[v].z.abs() < 0.4)
            .collect();
        assert_eq!(m.connected_components(&band).len(), 1);
        let caps: Vec<usize> = (0..m.vertices.len())
            .filter(|&v| m.vertices[v].z.abs() > 0.8)
            .collect();
        assert_eq!(m.connected_components(&caps).len(), 2);
    }

    #[test]
    fn convex_mesh_outward_normals() {
        let m = crate::synth::make_primitive_sphere(1.0, 2).unwrap();
        let normals = m.face_normals().unwrap();
        let center = m.centroid();
        for (fi, n) in normals.iter().enumerate() {
            assert!(n.dot(&(m.face_centroid(fi) - center)) > 0.0);
        }
    }

    #[test]
    fn polyline_resample_midpoint_and_endpoints() {
        let p = Polyline::new(vec![
            point![0.0, 0.0, 0.0],
            point![1.0, 0.0, 0.0],
            point![2.0, 0.0, 0.0],
        ])
        .unwrap();
        let one = p.resample(1);
        assert!((one[0] - point![1.0, 0.0, 0.0]).norm() < 1e-12);
        let two = p.resample(2);
        assert!((two[0] - point![0.0, 0.0, 0.0]).norm() < 1e-12);
        assert!((two[1] - point![2.0, 0.0, 0.0]).norm() < 1e-12);
    }
}
