//! Plane cross sections: intersect a subset of triangles with a plane and
//! chain the resulting segments into polylines.

use std::collections::HashMap;

use nalgebra::Point3;

use crate::error::Result;
use crate::mesh::{Plane, Polyline, TriMesh};

/// Weld tolerance for chaining section segment endpoints, in mm.
const CHAIN_TOLERANCE: f64 = 1e-9;

/// Vertices closer to the plane than this are snapped onto it.
const ON_PLANE_EPS: f64 = 1e-12;

/// Intersects the faces in `face_subset` with `plane` and returns the
/// maximal chained polylines, longest first. An empty result means no
/// triangle crossed the plane.
pub fn plane_intersection_curve(
    mesh: &TriMesh,
    face_subset: &[usize],
    plane: &Plane,
) -> Result<Vec<Polyline>> {
    let mut segments: Vec<[Point3<f64>; 2]> = Vec::new();
    let mut sorted: Vec<usize> = face_subset.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    for &fi in &sorted {
        let [a, b, c] = mesh.faces[fi];
        if let Some(seg) = triangle_plane_segment(
            &mesh.vertices[a],
            &mesh.vertices[b],
            &mesh.vertices[c],
            [a, b, c],
            plane,
        ) {
            segments.push(seg);
        }
    }
    Ok(chain_segments(segments))
}

/// Intersection segment of one triangle with the plane, or None if the
/// triangle does not cross it. Edge crossings are computed per canonical
/// (min,max) vertex pair so shared edges produce bitwise-identical points
/// on both adjacent faces.
fn triangle_plane_segment(
    pa: &Point3<f64>,
    pb: &Point3<f64>,
    pc: &Point3<f64>,
    ids: [usize; 3],
    plane: &Plane,
) -> Option<[Point3<f64>; 2]> {
    let points = [pa, pb, pc];
    let d: Vec<f64> = points
        .iter()
        .map(|p| {
            let s = plane.signed_distance(p);
            if s.abs() < ON_PLANE_EPS {
                0.0
            } else {
                s
            }
        })
        .collect();

    let mut crossings: Vec<Point3<f64>> = Vec::new();
    for (i, j) in [(0usize, 1usize), (1, 2), (2, 0)] {
        let (di, dj) = (d[i], d[j]);
        if di == 0.0 && dj == 0.0 {
            // whole edge in plane
            crossings.push(*points[i]);
            crossings.push(*points[j]);
        } else if di == 0.0 {
            crossings.push(*points[i]);
        } else if dj == 0.0 {
            // handled when this vertex leads another edge; push anyway and dedup
            crossings.push(*points[j]);
        } else if (di < 0.0) != (dj < 0.0) {
            // canonical orientation by vertex index for exact sharing
            let (lo, hi, dlo, dhi) = if ids[i] < ids[j] {
                (points[i], points[j], di, dj)
            } else {
                (points[j], points[i], dj, di)
            };
            let t = dlo / (dlo - dhi);
            crossings.push(lo + (hi - lo) * t);
        }
    }
    crossings.dedup_by(|a, b| (*a - *b).norm() < CHAIN_TOLERANCE);
    if crossings.len() >= 2 {
        let first = crossings[0];
        let far = crossings
            .iter()
            .skip(1)
            .max_by(|a, b| {
                ((*a - first).norm())
                    .partial_cmp(&((*b - first).norm()))
                    .unwrap()
            })
            .copied()
            .unwrap();
        if (far - first).norm() >= CHAIN_TOLERANCE {
            return Some([first, far]);
        }
    }
    None
}

fn quantize(p: &Point3<f64>) -> (i64, i64, i64) {
    (
        (p.x / CHAIN_TOLERANCE).round() as i64,
        (p.y / CHAIN_TOLERANCE).round() as i64,
        (p.z / CHAIN_TOLERANCE).round() as i64,
    )
}

/// Chains segments that share endpoints (welded within the tolerance) into
/// maximal open or closed polylines.
fn chain_segments(segments: Vec<[Point3<f64>; 2]>) -> Vec<Polyline> {
    // drop duplicate segments: an edge lying exactly in the plane is emitted
    // by both adjacent faces
    type Key = (i64, i64, i64);
    let mut seen: std::collections::HashSet<(Key, Key)> = Default::default();
    let segments: Vec<[Point3<f64>; 2]> = segments
        .into_iter()
        .filter(|seg| {
            let (a, b) = (quantize(&seg[0]), quantize(&seg[1]));
            seen.insert((a.min(b), a.max(b)))
        })
        .collect();
    let mut endpoint_map: HashMap<(i64, i64, i64), Vec<(usize, usize)>> = HashMap::new();
    for (si, seg) in segments.iter().enumerate() {
        for (end, p) in seg.iter().enumerate() {
            endpoint_map.entry(quantize(p)).or_default().push((si, end));
        }
    }

    let mut used = vec![false; segments.len()];
    let mut polylines = Vec::new();
    for start in 0..segments.len() {
        if used[start] {
            continue;
        }
        used[start] = true;
        let mut chain = vec![segments[start][0], segments[start][1]];
        // extend forward from the tail, then backward from the head
        for forward in [true, false] {
            loop {
                let tip = if forward {
                    *chain.last().unwrap()
                } else {
                    chain[0]
                };
                let mut extended = false;
                if let Some(candidates) = endpoint_map.get(&quantize(&tip)) {
                    for &(si, end) in candidates {
                        if used[si] {
                            continue;
                        }
                        let other = segments[si][1 - end];
                        used[si] = true;
                        if forward {
                            chain.push(other);
                        } else {
                            chain.insert(0, other);
                        }
                        extended = true;
                        break;
                    }
                }
                if !extended {
                    break;
                }
            }
        }
        chain.dedup_by(|a, b| (*a - *b).norm() < CHAIN_TOLERANCE);
        if chain.len() >= 2 {
            polylines.push(Polyline { points: chain });
        }
    }
    polylines.sort_by(|a, b| b.length().partial_cmp(&a.length()).unwrap());
    polylines
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{point, Vector3};

    #[test]
    fn sphere_equator_section() {
        let m = crate::synth::make_primitive_sphere(1.0, 3).unwrap();
        let plane = Plane::new(point![0.0, 0.0, 0.0], Vector3::z()).unwrap();
        let all: Vec<usize> = (0..m.faces.len()).collect();
        let curves = plane_intersection_curve(&m, &all, &plane).unwrap();
        assert_eq!(curves.len(), 1);
        let curve = &curves[0];
        assert!(curve.is_closed(1e-9));
        let mean_edge = m.mean_edge_length();
        for p in &curve.points {
            assert!(p.z.abs() < 1e-9);
            // within mesh resolution of the analytic unit circle
            assert!((p.coords.norm() - 1.0).abs() < mean_edge * mean_edge);
        }
    }

    #[test]
    fn plane_above_mesh_is_empty() {
        let m = crate::synth::make_primitive_sphere(1.0, 2).unwrap();
        let plane = Plane::new(point![0.0, 0.0, 5.0], Vector3::z()).unwrap();
        let all: Vec<usize> = (0..m.faces.len()).collect();
        assert!(plane_intersection_curve(&m, &all, &plane)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn single_triangle_two_point_polyline() {
        let m = TriMesh::new(
            vec![
                point![0.0, 0.0, -1.0],
                point![1.0, 0.0, 1.0],
                point![-1.0, 0.0, 1.0],
            ],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let plane = Plane::new(point![0.0, 0.0, 0.0], Vector3::z()).unwrap();
        let curves = plane_intersection_curve(&m, &[0], &plane).unwrap();
        assert_eq!(curves.len(), 1);
        assert_eq!(curves[0].points.len(), 2);
    }
}
