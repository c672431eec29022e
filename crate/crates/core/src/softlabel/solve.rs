use super::{HeatOptions, HeatSystem, LaplacianNormalization, SolverKind};
use crate::error::{Error, Result};
use crate::linalg::{conjugate_gradient, norm2, CgOptions, CsrMatrix, EnvelopeCholesky};
use crate::mesh::{cotangent_laplacian, lumped_vertex_areas, SparseOperator, TriangleMesh};

enum Backend {
    Cholesky(EnvelopeCholesky),
    Cg,
}

/// Heat-equilibrium solver for one system, reusable across all sources.
///
/// Solves the symmetric form `(K + diag(m ⊙ h)) w_s = m ⊙ h ⊙ p_s`, where
/// `K` is the cotangent stiffness and `m` the per-vertex mass (lumped areas,
/// or all ones for the raw stiffness normalization).
pub struct HeatSolver<'a> {
    system: &'a HeatSystem,
    matrix: CsrMatrix,
    scale: Vec<f64>,
    backend: Backend,
    opts: HeatOptions,
}

const REFINEMENT_STEPS: usize = 3;

impl<'a> HeatSolver<'a> {
    pub fn new(mesh: &TriangleMesh, system: &'a HeatSystem, opts: &HeatOptions) -> Result<Self> {
        let laplacian = cotangent_laplacian(mesh, opts.clamp_negative);
        let mass = match opts.normalization {
            LaplacianNormalization::Lumped => Some(lumped_vertex_areas(mesh)),
            LaplacianNormalization::Stiffness => None,
        };
        Self::from_operator(&laplacian, mass.as_deref(), system, opts)
    }

    /// `mass = None` uses the stiffness matrix as `−Δ` directly.
    pub fn from_operator(
        laplacian: &SparseOperator,
        mass: Option<&[f64]>,
        system: &'a HeatSystem,
        opts: &HeatOptions,
    ) -> Result<Self> {
        let n = system.vertex_count();
        if laplacian.dim() != n || mass.is_some_and(|m| m.len() != n) {
            return Err(Error::ShapeMismatch(format!(
                "operator of size {} for {n} vertices",
                laplacian.dim()
            )));
        }
        // isolated vertices carry no area; unit mass decouples them as w = p
        let scale: Vec<f64> = match mass {
            Some(m) => m
                .iter()
                .zip(system.h_diag())
                .map(|(&m, &h)| if m > 0.0 { m * h } else { h })
                .collect(),
            None => system.h_diag().to_vec(),
        };
        let matrix = laplacian.matrix().add_diagonal(&scale);
        let backend = match opts.solver {
            SolverKind::Cholesky => Backend::Cholesky(EnvelopeCholesky::factor(&matrix)?),
            SolverKind::Cg => Backend::Cg,
        };
        Ok(Self {
            system,
            matrix,
            scale,
            backend,
            opts: *opts,
        })
    }

    pub fn system_matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    /// Right-hand side of source `s`.
    pub fn rhs(&self, s: usize) -> Vec<f64> {
        let mut b = vec![0.0; self.scale.len()];
        for (d, bd) in b.iter_mut().enumerate() {
            if let Some(&(_, p)) = self.system.indicators(d).iter().find(|e| e.0 == s) {
                *bd = self.scale[d] * p;
            }
        }
        b
    }

    fn residual(&self, w: &[f64], b: &[f64]) -> Vec<f64> {
        let mut r = self.matrix.mul_vec(w);
        for (ri, bi) in r.iter_mut().zip(b) {
            *ri = bi - *ri;
        }
        r
    }

    /// Weight field `w_s`, with `‖A w − b‖ ≤ tol ‖b‖` checked on return.
    pub fn solve(&self, s: usize) -> Result<Vec<f64>> {
        if s >= self.system.source_count() {
            return Err(Error::OutOfRange {
                index: s,
                len: self.system.source_count(),
            });
        }
        let b = self.rhs(s);
        let b_norm = norm2(&b);
        match &self.backend {
            Backend::Cholesky(factor) => {
                let mut w = factor.solve(&b);
                let mut rel = 0.0;
                for step in 0..=REFINEMENT_STEPS {
                    let r = self.residual(&w, &b);
                    rel = if b_norm > 0.0 { norm2(&r) / b_norm } else { 0.0 };
                    if rel <= self.opts.tol {
                        return Ok(w);
                    }
                    if step < REFINEMENT_STEPS {
                        for (wi, di) in w.iter_mut().zip(factor.solve(&r)) {
                            *wi += di;
                        }
                    }
                }
                Err(Error::NotConverged {
                    iterations: REFINEMENT_STEPS,
                    residual: rel,
                })
            }
            Backend::Cg => {
                let x0 = self.system.indicator(s);
                let out = conjugate_gradient(
                    &self.matrix,
                    &b,
                    Some(&x0),
                    CgOptions {
                        tol: self.opts.tol,
                        max_iterations: self.opts.max_iterations,
                    },
                )?;
                Ok(out.solution)
            }
        }
    }
}

/// Single-source solve; prefer [`HeatSolver`] when solving for many sources.
pub fn solve_heat_equilibrium(
    laplacian: &SparseOperator,
    mass: Option<&[f64]>,
    system: &HeatSystem,
    s: usize,
    opts: &HeatOptions,
) -> Result<Vec<f64>> {
    HeatSolver::from_operator(laplacian, mass, system, opts)?.solve(s)
}

#[cfg(test)]
mod tests {
    use nalgebra::{DMatrix, DVector, Point3};

    use super::*;
    use crate::mesh::primitives;
    use crate::rig::SparseMarkerSet;
    use crate::softlabel::build_heat_system;

    /// Independent dense assembly of the cotangent stiffness and lumped mass.
    fn dense_operator(mesh: &TriangleMesh) -> (DMatrix<f64>, Vec<f64>) {
        let n = mesh.vertex_count();
        let mut k = DMatrix::zeros(n, n);
        let mut m = vec![0.0; n];
        let v = mesh.vertices();
        for tri in mesh.triangles() {
            let p: Vec<Point3<f64>> = tri.iter().map(|&i| v[i]).collect();
            let area = 0.5 * (p[1] - p[0]).cross(&(p[2] - p[0])).norm();
            for c in 0..3 {
                m[tri[c]] += area / 3.0;
                // angle at corner c is opposite edge (c+1, c+2)
                let e1 = p[(c + 1) % 3] - p[c];
                let e2 = p[(c + 2) % 3] - p[c];
                let cos = e1.dot(&e2) / (e1.norm() * e2.norm());
                let cot = cos / (1.0 - cos * cos).sqrt();
                let (i, j) = (tri[(c + 1) % 3], tri[(c + 2) % 3]);
                k[(i, j)] -= 0.5 * cot;
                k[(j, i)] -= 0.5 * cot;
            }
        }
        for i in 0..n {
            for j in 0..n {
                if i != j && k[(i, j)] > 0.0 {
                    k[(i, j)] = 0.0;
                }
            }
            let off: f64 = (0..n).filter(|&j| j != i).map(|j| k[(i, j)]).sum();
            k[(i, i)] = -off;
        }
        (k, m)
    }

    #[test]
    fn matches_dense_oracle() {
        let mesh = primitives::icosphere(1.0, 3);
        assert_eq!(mesh.vertex_count(), 642);
        let markers = SparseMarkerSet::at_vertices(&mesh, &[3, 100, 321, 555]).unwrap();
        let (k, m) = dense_operator(&mesh);
        for normalization in [LaplacianNormalization::Lumped, LaplacianNormalization::Stiffness] {
            let opts = HeatOptions {
                normalization,
                ..Default::default()
            };
            let sys = build_heat_system(&mesh, &markers, &opts).unwrap();
            let solver = HeatSolver::new(&mesh, &sys, &opts).unwrap();
            let mass: Vec<f64> = match normalization {
                LaplacianNormalization::Lumped => m.clone(),
                LaplacianNormalization::Stiffness => vec![1.0; m.len()],
            };
            let mut a = k.clone();
            for d in 0..mass.len() {
                a[(d, d)] += mass[d] * sys.h_diag()[d];
            }
            let lu = a.lu();
            for s in 0..4 {
                let p = sys.indicator(s);
                let b = DVector::from_iterator(p.len(), (0..p.len()).map(|d| mass[d] * sys.h_diag()[d] * p[d]));
                let oracle = lu.solve(&b).unwrap();
                let w = solver.solve(s).unwrap();
                for (x, y) in w.iter().zip(oracle.iter()) {
                    assert!((x - y).abs() <= 1e-8, "{x} vs {y}");
                }
            }
        }
    }

    #[test]
    fn mirror_symmetric_pair() {
        let mesh = primitives::dumbbell(1.0, 0.5, 0.2, 3);
        let v = mesh.vertices();
        let mirror: Vec<usize> = v
            .iter()
            .map(|p| {
                (0..v.len())
                    .min_by(|&a, &b| {
                        let q = Point3::new(-p.x, p.y, p.z);
                        (v[a] - q).norm().total_cmp(&(v[b] - q).norm())
                    })
                    .unwrap()
            })
            .collect();
        let left = (0..v.len()).min_by(|&a, &b| v[a].x.total_cmp(&v[b].x)).unwrap();
        let markers = SparseMarkerSet::at_vertices(&mesh, &[left, mirror[left]]).unwrap();
        let opts = HeatOptions::default();
        let sys = build_heat_system(&mesh, &markers, &opts).unwrap();
        let solver = HeatSolver::new(&mesh, &sys, &opts).unwrap();
        let w0 = solver.solve(0).unwrap();
        let w1 = solver.solve(1).unwrap();
        for d in 0..v.len() {
            assert!((w0[d] - w1[mirror[d]]).abs() <= 1e-8);
        }
    }

    #[test]
    fn raw_stiffness_unclamped_reports_or_solves() {
        let mesh = primitives::grid(6, 6, 1.0, 0.3);
        let markers = SparseMarkerSet::at_vertices(&mesh, &[0, 20]).unwrap();
        let opts = HeatOptions {
            clamp_negative: false,
            ..Default::default()
        };
        let sys = build_heat_system(&mesh, &markers, &opts).unwrap();
        let w = HeatSolver::new(&mesh, &sys, &opts).and_then(|s| s.solve(0));
        assert!(matches!(w, Ok(_) | Err(Error::NotPositiveDefinite { .. })));
    }

    #[test]
    fn out_of_range_source() {
        let mesh = primitives::icosphere(1.0, 1);
        let markers = SparseMarkerSet::at_vertices(&mesh, &[0]).unwrap();
        let opts = HeatOptions::default();
        let sys = build_heat_system(&mesh, &markers, &opts).unwrap();
        let solver = HeatSolver::new(&mesh, &sys, &opts).unwrap();
        assert!(matches!(solver.solve(1), Err(Error::OutOfRange { .. })));
    }
}
