//! Isotropic remeshing: iterated edge split / collapse / flip passes with
//! tangential relaxation, projecting back onto the input surface.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{Point3, Vector3};

use crate::error::{Result, SldError};
use crate::mesh::closest::SurfaceIndex;
use crate::mesh::TriMesh;

const DEFAULT_ITERATIONS: usize = 10;

pub fn remesh(mesh: &TriMesh, target_edge_length: f64) -> Result<TriMesh> {
    remesh_with(mesh, target_edge_length, DEFAULT_ITERATIONS)
}

pub fn remesh_with(mesh: &TriMesh, target_edge_length: f64, iterations: usize) -> Result<TriMesh> {
    if target_edge_length < 1e-3 {
        return Err(SldError::Parameter(format!(
            "remesh target must be at least 1e-3 mm, got {target_edge_length}"
        )));
    }
    let projector = SurfaceIndex::over_all_faces(mesh);
    let high = target_edge_length * 4.0 / 3.0;
    let low = target_edge_length * 4.0 / 5.0;

    let mut vertices = mesh.vertices.clone();
    let mut faces = mesh.faces.clone();
    for _ in 0..iterations {
        split_long_edges(&mut vertices, &mut faces, high);
        collapse_short_edges(&mut vertices, &mut faces, low, high);
        flip_for_valence(&vertices, &mut faces);
        tangential_relax(&mut vertices, &faces, &projector);
    }
    compact(&mut vertices, &mut faces);
    TriMesh::new(vertices, faces)
}

fn edge_key(u: usize, v: usize) -> (usize, usize) {
    (u.min(v), u.max(v))
}

fn edge_face_map(faces: &[[usize; 3]]) -> BTreeMap<(usize, usize), Vec<usize>> {
    let mut map: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (fi, f) in faces.iter().enumerate() {
        for e in 0..3 {
            map.entry(edge_key(f[e], f[(e + 1) % 3]))
                .or_default()
                .push(fi);
        }
    }
    map
}

fn split_long_edges(vertices: &mut Vec<Point3<f64>>, faces: &mut Vec<[usize; 3]>, high: f64) {
    for _pass in 0..8 {
        let map = edge_face_map(faces);
        let mut long: Vec<((usize, usize), f64)> = map
            .keys()
            .map(|&(u, v)| ((u, v), (vertices[u] - vertices[v]).norm()))
            .filter(|&(_, len)| len > high)
            .collect();
        if long.is_empty() {
            return;
        }
        long.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());

        let mut removed = vec![false; faces.len()];
        let mut new_faces: Vec<[usize; 3]> = Vec::new();
        for ((u, v), _) in long {
            let adjacent = &map[&(u, v)];
            // skip edges whose incident faces were already replaced this pass
            if adjacent.iter().any(|&fi| removed[fi]) {
                continue;
            }
            let mid = vertices.len();
            vertices.push(Point3::from(
                (vertices[u].coords + vertices[v].coords) / 2.0,
            ));
            for &fi in adjacent {
                removed[fi] = true;
                let f = faces[fi];
                let apex = *f.iter().find(|&&w| w != u && w != v).unwrap();
                // keep the original winding: replace one endpoint at a time
                let mut f1 = f;
                let mut f2 = f;
                for slot in 0..3 {
                    if f1[slot] == v {
                        f1[slot] = mid;
                    }
                    if f2[slot] == u {
                        f2[slot] = mid;
                    }
                }
                debug_assert!(f1.contains(&apex) && f2.contains(&apex));
                new_faces.push(f1);
                new_faces.push(f2);
            }
        }
        let mut kept: Vec<[usize; 3]> = faces
            .iter()
            .enumerate()
            .filter(|&(fi, _)| !removed[fi])
            .map(|(_, f)| *f)
            .collect();
        kept.extend(new_faces);
        *faces = kept;
    }
}

fn collapse_short_edges(
    vertices: &mut [Point3<f64>],
    faces: &mut Vec<[usize; 3]>,
    low: f64,
    high: f64,
) {
    // collapses invalidate neighborhoods, so work in fresh passes until no
    // collapsible short edge remains
    for _pass in 0..8 {
        if !collapse_pass(vertices, faces, low, high) {
            return;
        }
    }
}

fn collapse_pass(
    vertices: &mut [Point3<f64>],
    faces: &mut Vec<[usize; 3]>,
    low: f64,
    high: f64,
) -> bool {
    let map = edge_face_map(faces);
    let mut neighbors: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); vertices.len()];
    let mut vertex_faces: Vec<Vec<usize>> = vec![Vec::new(); vertices.len()];
    for (fi, f) in faces.iter().enumerate() {
        for e in 0..3 {
            neighbors[f[e]].insert(f[(e + 1) % 3]);
            neighbors[f[e]].insert(f[(e + 2) % 3]);
            vertex_faces[f[e]].push(fi);
        }
    }
    let mut short: Vec<((usize, usize), f64)> = map
        .keys()
        .map(|&(u, v)| ((u, v), (vertices[u] - vertices[v]).norm()))
        .filter(|&(_, len)| len < low)
        .collect();
    short.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());

    let mut touched = vec![false; vertices.len()];
    let mut removed = vec![false; faces.len()];
    let mut collapsed_any = false;
    for ((u, v), _) in short {
        if touched[u] || touched[v] {
            continue;
        }
        let shared = &map[&(u, v)];
        if shared.len() != 2 {
            continue; // boundary or non-manifold edge: leave untouched
        }
        // link condition: u and v may share only the two face apices
        let apices: BTreeSet<usize> = shared
            .iter()
            .map(|&fi| *faces[fi].iter().find(|&&w| w != u && w != v).unwrap())
            .collect();
        let common: BTreeSet<usize> = neighbors[u].intersection(&neighbors[v]).copied().collect();
        if common != apices {
            continue;
        }
        let mid = Point3::from((vertices[u].coords + vertices[v].coords) / 2.0);
        // the merged vertex must not create over-long edges
        let too_long = neighbors[u]
            .iter()
            .chain(neighbors[v].iter())
            .filter(|&&w| w != u && w != v)
            .any(|&w| (mid - vertices[w]).norm() > high);
        if too_long {
            continue;
        }
        // no surviving face may flip its normal
        let mut flips = false;
        for &fi in vertex_faces[u].iter().chain(vertex_faces[v].iter()) {
            if removed[fi] || shared.contains(&fi) {
                continue;
            }
            let f = faces[fi];
            let pos = |w: usize| if w == u || w == v { mid } else { vertices[w] };
            let before =
                (vertices[f[1]] - vertices[f[0]]).cross(&(vertices[f[2]] - vertices[f[0]]));
            let after = (pos(f[1]) - pos(f[0])).cross(&(pos(f[2]) - pos(f[0])));
            if after.norm() < 1e-12 || before.dot(&after) <= 0.0 {
                flips = true;
                break;
            }
        }
        if flips {
            continue;
        }
        // apply: v merges into u at the midpoint
        vertices[u] = mid;
        for &fi in &vertex_faces[v].clone() {
            if removed[fi] {
                continue;
            }
            if shared.contains(&fi) {
                removed[fi] = true;
            } else {
                for slot in faces[fi].iter_mut() {
                    if *slot == v {
                        *slot = u;
                    }
                }
            }
        }
        for &fi in shared {
            removed[fi] = true;
        }
        touched[u] = true;
        touched[v] = true;
        for &w in neighbors[u].union(&neighbors[v]) {
            touched[w] = true;
        }
        collapsed_any = true;
    }
    let mut kept: Vec<[usize; 3]> = faces
        .iter()
        .enumerate()
        .filter(|&(fi, _)| !removed[fi])
        .map(|(_, f)| *f)
        .collect();
    faces.clear();
    faces.append(&mut kept);
    collapsed_any
}

fn flip_for_valence(vertices: &[Point3<f64>], faces: &mut [[usize; 3]]) {
    let map = edge_face_map(faces);
    let mut valence = vec![0i64; vertices.len()];
    for f in faces.iter() {
        for &v in f {
            valence[v] += 1;
        }
    }
    let mut edge_set: BTreeSet<(usize, usize)> = map.keys().copied().collect();
    let mut modified = vec![false; faces.len()];
    let deviation = |val: i64| (val - 6) * (val - 6);

    for (&(u, v), adjacent) in &map {
        if adjacent.len() != 2 {
            continue;
        }
        let (f1, f2) = (adjacent[0], adjacent[1]);
        if modified[f1] || modified[f2] {
            continue;
        }
        let a = *faces[f1].iter().find(|&&w| w != u && w != v).unwrap();
        let b = *faces[f2].iter().find(|&&w| w != u && w != v).unwrap();
        if a == b || edge_set.contains(&edge_key(a, b)) {
            continue;
        }
        let before = deviation(valence[u])
            + deviation(valence[v])
            + deviation(valence[a])
            + deviation(valence[b]);
        let after = deviation(valence[u] - 1)
            + deviation(valence[v] - 1)
            + deviation(valence[a] + 1)
            + deviation(valence[b] + 1);
        if after >= before {
            continue;
        }
        // identify winding: in one face u precedes v, in the other v precedes u
        let u_precedes_v = |f: &[usize; 3]| (0..3).any(|e| f[e] == u && f[(e + 1) % 3] == v);
        let (fu, fv) = if u_precedes_v(&faces[f1]) {
            (f1, f2)
        } else {
            (f2, f1)
        };
        let a = *faces[fu].iter().find(|&&w| w != u && w != v).unwrap();
        let b = *faces[fv].iter().find(|&&w| w != u && w != v).unwrap();
        let old_normal = (vertices[v] - vertices[u]).cross(&(vertices[a] - vertices[u]))
            + (vertices[u] - vertices[v]).cross(&(vertices[b] - vertices[v]));
        let t1 = [u, b, a];
        let t2 = [b, v, a];
        let n1 = (vertices[t1[1]] - vertices[t1[0]]).cross(&(vertices[t1[2]] - vertices[t1[0]]));
        let n2 = (vertices[t2[1]] - vertices[t2[0]]).cross(&(vertices[t2[2]] - vertices[t2[0]]));
        if n1.norm() < 1e-12
            || n2.norm() < 1e-12
            || n1.dot(&old_normal) <= 0.0
            || n2.dot(&old_normal) <= 0.0
        {
            continue;
        }
        faces[fu] = t1;
        faces[fv] = t2;
        modified[fu] = true;
        modified[fv] = true;
        valence[u] -= 1;
        valence[v] -= 1;
        valence[a] += 1;
        valence[b] += 1;
        edge_set.remove(&edge_key(u, v));
        edge_set.insert(edge_key(a, b));
    }
}

fn tangential_relax(
    vertices: &mut [Point3<f64>],
    faces: &[[usize; 3]],
    projector: &SurfaceIndex<'_>,
) {
    let mut neighbors: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); vertices.len()];
    let mut normals: Vec<Vector3<f64>> = vec![Vector3::zeros(); vertices.len()];
    let mut boundary = vec![false; vertices.len()];
    let mut edge_count: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for f in faces {
        let n = (vertices[f[1]] - vertices[f[0]]).cross(&(vertices[f[2]] - vertices[f[0]]));
        for e in 0..3 {
            neighbors[f[e]].insert(f[(e + 1) % 3]);
            neighbors[f[e]].insert(f[(e + 2) % 3]);
            normals[f[e]] += n;
            *edge_count
                .entry(edge_key(f[e], f[(e + 1) % 3]))
                .or_insert(0) += 1;
        }
    }
    for (&(u, v), &count) in &edge_count {
        if count != 2 {
            boundary[u] = true;
            boundary[v] = true;
        }
    }
    let snapshot: Vec<Point3<f64>> = vertices.to_vec();
    for v in 0..vertices.len() {
        if boundary[v] || neighbors[v].is_empty() {
            continue;
        }
        let centroid = Point3::from(
            neighbors[v]
                .iter()
                .map(|&w| snapshot[w].coords)
                .sum::<Vector3<f64>>()
                / neighbors[v].len() as f64,
        );
        let mut delta = centroid - snapshot[v];
        if normals[v].norm() > 1e-12 {
            let n = normals[v].normalize();
            delta -= n * delta.dot(&n);
        }
        let moved = snapshot[v] + delta * 0.5;
        vertices[v] = projector.closest_point(&moved).0;
    }
}

fn compact(vertices: &mut Vec<Point3<f64>>, faces: &mut [[usize; 3]]) {
    let mut used = vec![false; vertices.len()];
    for f in faces.iter() {
        for &v in f {
            used[v] = true;
        }
    }
    let mut remap = vec![usize::MAX; vertices.len()];
    let mut kept = Vec::new();
    for (v, &u) in used.iter().enumerate() {
        if u {
            remap[v] = kept.len();
            kept.push(vertices[v]);
        }
    }
    for f in faces.iter_mut() {
        for slot in 0..3 {
            f[slot] = remap[f[slot]];
        }
    }
    *vertices = kept;
}
