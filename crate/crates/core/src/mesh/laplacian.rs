use std::collections::BTreeMap;

use super::{triangle_area, TriangleMesh};
use crate::linalg::CsrMatrix;

/// Symmetric positive semi-definite discretization of `−Δ` on a mesh.
///
/// Off-diagonal entry `(i, j)` is `−(cot α + cot β) / 2` for the two angles
/// opposite edge `ij`; the diagonal makes every row sum to zero.
#[derive(Debug, Clone)]
pub struct SparseOperator {
    matrix: CsrMatrix,
    clamped: bool,
}

impl SparseOperator {
    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn is_clamped(&self) -> bool {
        self.clamped
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.matrix.get(row, col)
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        self.matrix.mul_vec(x)
    }

    /// All stored `(row, col, value)` entries.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.matrix.triplets()
    }
}

fn cot(a: nalgebra::Vector3<f64>, b: nalgebra::Vector3<f64>) -> f64 {
    let cross = a.cross(&b).norm();
    a.dot(&b) / cross
}

/// Assembles the cotangent Laplacian. With `clamp_negative`, edge weights
/// below zero (edges opposite obtuse angles) are set to zero, which keeps
/// every off-diagonal entry non-positive.
pub fn cotangent_laplacian(mesh: &TriangleMesh, clamp_negative: bool) -> SparseOperator {
    let n = mesh.vertex_count();
    let verts = mesh.vertices();
    let mut weights: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for tri in mesh.triangles() {
        for k in 0..3 {
            let i = tri[k];
            let j = tri[(k + 1) % 3];
            let o = tri[(k + 2) % 3];
            let w = 0.5 * cot(verts[i] - verts[o], verts[j] - verts[o]);
            *weights.entry((i.min(j), i.max(j))).or_insert(0.0) += w;
        }
    }
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (&(i, j), &w) in &weights {
        let w = if clamp_negative { w.max(0.0) } else { w };
        rows[i].push((j, -w));
        rows[j].push((i, -w));
    }
    for (i, row) in rows.iter_mut().enumerate() {
        let diag: f64 = -row.iter().map(|&(_, v)| v).sum::<f64>();
        row.push((i, diag));
        row.sort_unstable_by_key(|&(c, _)| c);
    }
    SparseOperator {
        matrix: CsrMatrix::from_rows(rows),
        clamped: clamp_negative,
    }
}

/// Barycentric lumped mass: one third of the area of each incident triangle.
pub fn lumped_vertex_areas(mesh: &TriangleMesh) -> Vec<f64> {
    let mut areas = vec![0.0; mesh.vertex_count()];
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let [a, b, c] = mesh.triangle_points(t);
        let third = triangle_area(&a, &b, &c) / 3.0;
        for &v in tri {
            areas[v] += third;
        }
    }
    areas
}

#[cfg(test)]
mod tests {
    use nalgebra::Point3;

    use super::*;
    use crate::mesh::primitives;

    #[test]
    fn equilateral_triangle_weight() {
        let h = 3f64.sqrt() / 2.0;
        let (mesh, _) = TriangleMesh::new(
            vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(1.0, 0.0, 0.0),
                Point3::new(0.5, h, 0.0),
            ],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let lap = cotangent_laplacian(&mesh, true);
        let expected = -(60f64.to_radians().tan().recip()) / 2.0;
        assert!((lap.get(0, 1) - expected).abs() < 1e-12);
        assert!((lap.get(0, 1) + 0.2886751).abs() < 1e-7);
    }

    #[test]
    fn obtuse_edge_is_clamped() {
        let (mesh, _) = TriangleMesh::new(
            vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(2.0, 0.0, 0.0),
                Point3::new(1.0, 0.2, 0.0),
            ],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let raw = cotangent_laplacian(&mesh, false);
        assert!(raw.get(0, 1) > 0.0);
        let clamped = cotangent_laplacian(&mesh, true);
        assert_eq!(clamped.get(0, 1), 0.0);
        assert!(clamped.triplets().all(|(i, j, v)| i == j || v <= 0.0));
    }

    #[test]
    fn constant_kernel_and_symmetry() {
        for mesh in [
            primitives::icosphere(1.0, 3),
            primitives::dumbbell(1.0, 0.4, 0.15, 2),
            primitives::grid(7, 5, 1.0, 0.6),
        ] {
            for clamp in [true, false] {
                let lap = cotangent_laplacian(&mesh, clamp);
                let ones = vec![1.0; mesh.vertex_count()];
                let r = lap.mul_vec(&ones);
                assert!(r.iter().all(|v| v.abs() <= 1e-10));
                for (i, j, v) in lap.triplets() {
                    assert_eq!(v, lap.get(j, i));
                }
            }
        }
    }

    #[test]
    fn lumped_areas_sum_to_surface_area() {
        let mesh = primitives::icosphere(1.0, 2);
        let total: f64 = lumped_vertex_areas(&mesh).iter().sum();
        assert!((total - crate::mesh::surface_area(&mesh)).abs() < 1e-12);
    }
}
