//! Shortest paths on the mesh edge graph (Dijkstra with Euclidean weights).
//!
//! Ties between equal-length paths are broken toward the lexicographically
//! smallest vertex-index sequence so results are reproducible.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Result, SldError};
use crate::mesh::{Polyline, TriMesh, VertexAdjacency};

struct QueueEntry {
    dist: f64,
    vertex: usize,
}

impl PartialEq for QueueEntry {
    fn eq(&self, other: &Self) -> bool {
        self.dist == other.dist && self.vertex == other.vertex
    }
}
impl Eq for QueueEntry {}
impl PartialOrd for QueueEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for QueueEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on distance, then on vertex index
        other
            .dist
            .partial_cmp(&self.dist)
            .unwrap()
            .then(other.vertex.cmp(&self.vertex))
    }
}

/// Dijkstra result over an optional vertex mask.
pub struct ShortestPaths {
    pub source: usize,
    pub dist: Vec<f64>,
    pub pred: Vec<usize>,
}

impl ShortestPaths {
    /// Vertex-index path source..=target, or None if unreached.
    pub fn path_to(&self, target: usize) -> Option<Vec<usize>> {
        if self.dist[target].is_infinite() {
            return None;
        }
        let mut path = vec![target];
        let mut v = target;
        while v != self.source {
            v = self.pred[v];
            path.push(v);
        }
        path.reverse();
        Some(path)
    }
}

/// Single-source Dijkstra on the edge graph. `mask`, when given, restricts
/// traversal to vertices where `mask[v]` is true (the source is always
/// allowed).
pub fn shortest_paths(
    mesh: &TriMesh,
    adj: &VertexAdjacency,
    source: usize,
    mask: Option<&[bool]>,
) -> ShortestPaths {
    let n = mesh.vertices.len();
    let mut dist = vec![f64::INFINITY; n];
    let mut pred = vec![usize::MAX; n];
    let mut done = vec![false; n];
    dist[source] = 0.0;
    let mut heap = BinaryHeap::new();
    heap.push(QueueEntry {
        dist: 0.0,
        vertex: source,
    });
    while let Some(QueueEntry { dist: d, vertex: v }) = heap.pop() {
        if done[v] {
            continue;
        }
        done[v] = true;
        for &u in &adj.neighbors[v] {
            if let Some(mask) = mask {
                if !mask[u] {
                    continue;
                }
            }
            let w = (mesh.vertices[u] - mesh.vertices[v]).norm();
            let candidate = d + w;
            if candidate < dist[u] {
                dist[u] = candidate;
                pred[u] = v;
                heap.push(QueueEntry {
                    dist: candidate,
                    vertex: u,
                });
            } else if candidate == dist[u] && pred[u] != usize::MAX {
                // equal length: prefer the lexicographically smaller sequence
                if lex_smaller(&pred, source, v, pred[u]) {
                    pred[u] = v;
                }
            }
        }
    }
    ShortestPaths { source, dist, pred }
}

/// True if the path ending at predecessor `a` is lexicographically smaller
/// than the path ending at predecessor `b` (both from `source`).
fn lex_smaller(pred: &[usize], source: usize, a: usize, b: usize) -> bool {
    let walk = |mut v: usize| {
        let mut seq = vec![v];
        while v != source && pred[v] != usize::MAX {
            v = pred[v];
            seq.push(v);
        }
        seq.reverse();
        seq
    };
    walk(a) < walk(b)
}

/// Shortest path between two vertices as a polyline of vertex positions.
/// `src == dst` yields a degenerate single-point path.
pub fn geodesic_path(mesh: &TriMesh, src: usize, dst: usize) -> Result<Vec<nalgebra::Point3<f64>>> {
    let adj = mesh.vertex_adjacency();
    geodesic_path_with(mesh, &adj, src, dst, None)
}

pub fn geodesic_path_with(
    mesh: &TriMesh,
    adj: &VertexAdjacency,
    src: usize,
    dst: usize,
    mask: Option<&[bool]>,
) -> Result<Vec<nalgebra::Point3<f64>>> {
    if src == dst {
        return Ok(vec![mesh.vertices[src]]);
    }
    let sp = shortest_paths(mesh, adj, src, mask);
    let path = sp.path_to(dst).ok_or(SldError::NoPath { src, dst })?;
    Ok(path.into_iter().map(|v| mesh.vertices[v]).collect())
}

/// Geodesic path as a [`Polyline`]; errors on the degenerate single-point case.
pub fn geodesic_polyline(mesh: &TriMesh, src: usize, dst: usize) -> Result<Polyline> {
    Polyline::new(geodesic_path(mesh, src, dst)?)
}

pub fn path_length(points: &[nalgebra::Point3<f64>]) -> f64 {
    points.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
}
