//! Indexed triangle meshes and the geometric operators built on them.
//!
//! Everything downstream (marker placement, heat diffusion, rendering,
//! evaluation) reads a [`TriangleMesh`]. Meshes are immutable once built; the
//! edge graph used by the geodesic routines is computed lazily and cached.

mod geodesic;
pub mod io;
mod laplacian;
mod measure;
pub mod primitives;
mod ray;

use std::collections::HashSet;
use std::sync::OnceLock;

use nalgebra::{Point3, Vector3};

use crate::error::{Error, Result};

pub use geodesic::{geodesic_between, geodesic_distances, vertex_distances, DistanceField};
pub use laplacian::{cotangent_laplacian, lumped_vertex_areas, SparseOperator};
pub use measure::{connected_components, geodesic_diameter, surface_area, DiameterOptions, GeodesicDiameter};
pub use ray::{ray_intersect, ray_triangle, RayHit};

/// Faces with area at or below this value (m²) are dropped during cleanup.
pub const DEGENERATE_AREA: f64 = 1e-12;

/// Tolerance on barycentric coordinate sums.
pub const BARYCENTRIC_TOL: f64 = 1e-9;

/// Indexed triangle surface. Positions are in meters.
#[derive(Debug)]
pub struct TriangleMesh {
    vertices: Vec<Point3<f64>>,
    triangles: Vec<[usize; 3]>,
    colors: Option<Vec<[u8; 3]>>,
    normals: Option<Vec<Vector3<f64>>>,
    graph: OnceLock<EdgeGraph>,
}

impl Clone for TriangleMesh {
    fn clone(&self) -> Self {
        Self {
            vertices: self.vertices.clone(),
            triangles: self.triangles.clone(),
            colors: self.colors.clone(),
            normals: self.normals.clone(),
            graph: OnceLock::new(),
        }
    }
}

/// What load-time cleanup removed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CleanupReport {
    pub degenerate_faces: usize,
    pub duplicate_faces: usize,
}

impl CleanupReport {
    pub fn warnings(&self) -> usize {
        self.degenerate_faces + self.duplicate_faces
    }
}

impl TriangleMesh {
    /// Builds a mesh, dropping degenerate and duplicate faces.
    pub fn new(vertices: Vec<Point3<f64>>, triangles: Vec<[usize; 3]>) -> Result<(Self, CleanupReport)> {
        if vertices.len() < 3 {
            return Err(Error::EmptyMesh(format!(
                "{} vertices (need at least 3)",
                vertices.len()
            )));
        }
        let n = vertices.len();
        let mut report = CleanupReport::default();
        let mut seen = HashSet::with_capacity(triangles.len());
        let mut kept = Vec::with_capacity(triangles.len());
        for tri in triangles {
            for &i in &tri {
                if i >= n {
                    return Err(Error::OutOfRange { index: i, len: n });
                }
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                report.degenerate_faces += 1;
                continue;
            }
            if triangle_area(&vertices[tri[0]], &vertices[tri[1]], &vertices[tri[2]]) <= DEGENERATE_AREA {
                report.degenerate_faces += 1;
                continue;
            }
            let mut key = tri;
            key.sort_unstable();
            if !seen.insert(key) {
                report.duplicate_faces += 1;
                continue;
            }
            kept.push(tri);
        }
        if kept.is_empty() {
            return Err(Error::EmptyMesh("no valid triangles".into()));
        }
        if report.warnings() > 0 {
            log::warn!(
                "mesh cleanup dropped {} degenerate and {} duplicate faces",
                report.degenerate_faces,
                report.duplicate_faces
            );
        }
        Ok((
            Self {
                vertices,
                triangles: kept,
                colors: None,
                normals: None,
                graph: OnceLock::new(),
            },
            report,
        ))
    }

    /// Same connectivity, new positions. No cleanup is applied, so vertex and
    /// face indices stay aligned with `self` (needed for deformed copies).
    pub fn with_positions(&self, vertices: Vec<Point3<f64>>) -> Result<Self> {
        if vertices.len() != self.vertices.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} positions, got {}",
                self.vertices.len(),
                vertices.len()
            )));
        }
        Ok(Self {
            vertices,
            triangles: self.triangles.clone(),
            colors: self.colors.clone(),
            normals: None,
            graph: OnceLock::new(),
        })
    }

    pub fn with_colors(mut self, colors: Vec<[u8; 3]>) -> Result<Self> {
        if colors.len() != self.vertices.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} colors for {} vertices",
                colors.len(),
                self.vertices.len()
            )));
        }
        self.colors = Some(colors);
        Ok(self)
    }

    pub fn with_normals(mut self, normals: Vec<Vector3<f64>>) -> Result<Self> {
        if normals.len() != self.vertices.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} normals for {} vertices",
                normals.len(),
                self.vertices.len()
            )));
        }
        self.normals = Some(normals);
        Ok(self)
    }

    #[inline]
    pub fn vertices(&self) -> &[Point3<f64>] {
        &self.vertices
    }

    #[inline]
    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    #[inline]
    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    #[inline]
    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn colors(&self) -> Option<&[[u8; 3]]> {
        self.colors.as_deref()
    }

    pub fn normals(&self) -> Option<&[Vector3<f64>]> {
        self.normals.as_deref()
    }

    pub fn triangle_points(&self, t: usize) -> [Point3<f64>; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    /// Area-weighted vertex normals (computed from geometry, ignoring stored normals).
    pub fn vertex_normals(&self) -> Vec<Vector3<f64>> {
        let mut normals = vec![Vector3::zeros(); self.vertices.len()];
        for tri in &self.triangles {
            let [a, b, c] = tri.map(|i| self.vertices[i]);
            let n = (b - a).cross(&(c - a));
            for &i in tri {
                normals[i] += n;
            }
        }
        for n in &mut normals {
            let len = n.norm();
            if len > 0.0 {
                *n /= len;
            }
        }
        normals
    }

    /// Axis-aligned bounding box (min, max).
    pub fn bounds(&self) -> (Point3<f64>, Point3<f64>) {
        let mut lo = self.vertices[0];
        let mut hi = self.vertices[0];
        for p in &self.vertices[1..] {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        (lo, hi)
    }

    pub fn centroid(&self) -> Point3<f64> {
        let sum = self.vertices.iter().fold(Vector3::zeros(), |acc, p| acc + p.coords);
        Point3::from(sum / self.vertices.len() as f64)
    }

    /// Vertex adjacency with Euclidean edge lengths, built on first use.
    pub fn edge_graph(&self) -> &EdgeGraph {
        self.graph
            .get_or_init(|| EdgeGraph::build(&self.vertices, &self.triangles))
    }
}

pub(crate) fn triangle_area(a: &Point3<f64>, b: &Point3<f64>, c: &Point3<f64>) -> f64 {
    0.5 * (b - a).cross(&(c - a)).norm()
}

/// Compressed vertex adjacency of the triangle edge graph.
#[derive(Debug, Clone)]
pub struct EdgeGraph {
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
    lengths: Vec<f64>,
}

impl EdgeGraph {
    fn build(vertices: &[Point3<f64>], triangles: &[[usize; 3]]) -> Self {
        let n = vertices.len();
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for tri in triangles {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                adj[a].push(b);
                adj[b].push(a);
            }
        }
        let mut offsets = Vec::with_capacity(n + 1);
        let mut neighbors = Vec::new();
        let mut lengths = Vec::new();
        offsets.push(0);
        for (i, list) in adj.iter_mut().enumerate() {
            list.sort_unstable();
            list.dedup();
            for &j in list.iter() {
                neighbors.push(j);
                lengths.push((vertices[i] - vertices[j]).norm());
            }
            offsets.push(neighbors.len());
        }
        Self {
            offsets,
            neighbors,
            lengths,
        }
    }

    #[inline]
    pub fn vertex_count(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Neighbors of `v` paired with edge lengths.
    #[inline]
    pub fn neighbors(&self, v: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.offsets[v]..self.offsets[v + 1];
        self.neighbors[range.clone()]
            .iter()
            .copied()
            .zip(self.lengths[range].iter().copied())
    }

    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }
}

/// A point on a mesh given by triangle index and barycentric coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfacePoint {
    pub triangle: usize,
    pub barycentric: [f64; 3],
}

impl SurfacePoint {
    pub fn new(triangle: usize, barycentric: [f64; 3]) -> Result<Self> {
        let sum: f64 = barycentric.iter().sum();
        if barycentric.iter().any(|&b| !(0.0..=1.0).contains(&b)) || (sum - 1.0).abs() > BARYCENTRIC_TOL {
            return Err(Error::InvalidInput(format!(
                "barycentric coordinates {barycentric:?} are not a convex combination"
            )));
        }
        Ok(Self { triangle, barycentric })
    }

    /// Surface point sitting exactly on corner `corner` of `triangle`.
    pub fn at_corner(triangle: usize, corner: usize) -> Self {
        let mut barycentric = [0.0; 3];
        barycentric[corner] = 1.0;
        Self { triangle, barycentric }
    }

    pub fn check(&self, mesh: &TriangleMesh) -> Result<()> {
        if self.triangle >= mesh.triangle_count() {
            return Err(Error::OutOfRange {
                index: self.triangle,
                len: mesh.triangle_count(),
            });
        }
        Ok(())
    }

    pub fn position(&self, mesh: &TriangleMesh) -> Point3<f64> {
        let [a, b, c] = mesh.triangle_points(self.triangle);
        let [u, v, w] = self.barycentric;
        Point3::from(a.coords * u + b.coords * v + c.coords * w)
    }

    /// Vertex of the host triangle closest (Euclidean) to this point.
    pub fn nearest_vertex(&self, mesh: &TriangleMesh) -> usize {
        let p = self.position(mesh);
        let tri = mesh.triangles()[self.triangle];
        let mut best = tri[0];
        let mut best_d = f64::INFINITY;
        for &v in &tri {
            let d = (mesh.vertices()[v] - p).norm_squared();
            if d < best_d {
                best_d = d;
                best = v;
            }
        }
        best
    }
}
