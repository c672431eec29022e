use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::{SurfacePoint, TriangleMesh};
use crate::error::Result;

/// Per-vertex distances from one source vertex; `f64::INFINITY` marks
/// vertices in other connected components.
#[derive(Debug, Clone)]
pub struct DistanceField {
    pub source: usize,
    pub distances: Vec<f64>,
}

impl DistanceField {
    pub fn farthest(&self) -> Option<(usize, f64)> {
        self.distances
            .iter()
            .copied()
            .enumerate()
            .filter(|(_, d)| d.is_finite())
            .max_by(|a, b| a.1.total_cmp(&b.1))
    }
}

#[derive(Clone, Copy, PartialEq)]
struct Entry {
    dist: f64,
    vertex: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on distance, ties broken by vertex id for determinism
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.vertex.cmp(&self.vertex))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn dijkstra(mesh: &TriangleMesh, source: usize, stop_at: Option<usize>) -> Vec<f64> {
    let graph = mesh.edge_graph();
    let mut dist = vec![f64::INFINITY; graph.vertex_count()];
    let mut heap = BinaryHeap::new();
    dist[source] = 0.0;
    heap.push(Entry {
        dist: 0.0,
        vertex: source,
    });
    while let Some(Entry { dist: d, vertex: v }) = heap.pop() {
        if d > dist[v] {
            continue;
        }
        if stop_at == Some(v) {
            break;
        }
        for (u, len) in graph.neighbors(v) {
            let nd = d + len;
            if nd < dist[u] {
                dist[u] = nd;
                heap.push(Entry { dist: nd, vertex: u });
            }
        }
    }
    dist
}

/// Edge-graph shortest-path distances from vertex `source` to every vertex.
pub fn vertex_distances(mesh: &TriangleMesh, source: usize) -> Vec<f64> {
    assert!(source < mesh.vertex_count());
    dijkstra(mesh, source, None)
}

/// Geodesic distance field from a surface point.
///
/// The source is snapped to the nearest corner of its triangle and distances
/// are shortest paths over the mesh edge graph.
pub fn geodesic_distances(mesh: &TriangleMesh, source: &SurfacePoint) -> Result<DistanceField> {
    source.check(mesh)?;
    let v = source.nearest_vertex(mesh);
    Ok(DistanceField {
        source: v,
        distances: dijkstra(mesh, v, None),
    })
}

/// Edge-graph distance between two vertices, stopping as soon as `b` settles.
pub fn geodesic_between(mesh: &TriangleMesh, a: usize, b: usize) -> f64 {
    if a == b {
        return 0.0;
    }
    dijkstra(mesh, a, Some(b))[b]
}
