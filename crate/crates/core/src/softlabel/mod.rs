//! Densification of sparse markers into per-vertex soft labels.
//!
//! Each marker `s` yields a weight field `w_s` solving the heat-equilibrium
//! system `(−Δ + H) w_s = H p_s`, where `p_s` indicates the vertices whose
//! nearest marker is `s` and `H_dd = k·c / 𝒟(d)²` grows near the markers.
//! Because the indicators of all markers sum to one at every vertex, the
//! solutions do too.

mod io;
mod solve;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mesh::{vertex_distances, TriangleMesh};
use crate::rig::SparseMarkerSet;

pub use io::{
    export_labels, label_colors, marker_color, read_labels, write_labels, write_provenance_sidecar, ExportMode,
};
pub use solve::{solve_heat_equilibrium, HeatSolver};

/// How the Laplacian is weighted against `H`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LaplacianNormalization {
    /// Laplace–Beltrami `M⁻¹K` with lumped vertex areas `M`; solved
    /// symmetrically as `(K + M H) w = M H p`. Units match `H` (1/m²).
    #[default]
    Lumped,
    /// Raw cotangent stiffness `K`, dimensionless.
    Stiffness,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    /// Envelope Cholesky, one factorization shared by all markers.
    #[default]
    Cholesky,
    /// Jacobi-preconditioned conjugate gradients per marker.
    Cg,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct HeatOptions {
    pub c: f64,
    /// Distances below this (meters) are raised to it before forming `H`.
    pub distance_floor: f64,
    /// Markers within this distance (meters) of the nearest count as tied.
    pub tie_tolerance: f64,
    pub normalization: LaplacianNormalization,
    pub clamp_negative: bool,
    pub solver: SolverKind,
    /// Relative residual bound `‖A w − b‖ ≤ tol ‖b‖`.
    pub tol: f64,
    pub max_iterations: usize,
}

impl Default for HeatOptions {
    fn default() -> Self {
        Self {
            c: 1.0,
            distance_floor: 1e-4,
            tie_tolerance: 1e-9,
            normalization: LaplacianNormalization::Lumped,
            clamp_negative: true,
            solver: SolverKind::Cholesky,
            tol: 1e-8,
            max_iterations: 20_000,
        }
    }
}

/// Diagonal `H` and sparse indicators `P` of the heat-equilibrium system.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatSystem {
    sources: usize,
    h: Vec<f64>,
    /// Per vertex: the tied-nearest sources, each with weight `1/k`.
    indicators: Vec<Vec<(usize, f64)>>,
    nearest: Vec<(usize, f64)>,
}

impl HeatSystem {
    /// Builds the system from per-source distance fields `distances[s][d]`.
    /// Infinite entries mean unreachable.
    pub fn from_distances(distances: &[Vec<f64>], opts: &HeatOptions) -> Result<Self> {
        let sources = distances.len();
        if sources == 0 {
            return Err(Error::InvalidInput("no heat sources".into()));
        }
        let n = distances[0].len();
        if distances.iter().any(|d| d.len() != n) {
            return Err(Error::ShapeMismatch("distance fields differ in length".into()));
        }
        if !(opts.c > 0.0) || !(opts.distance_floor > 0.0) {
            return Err(Error::InvalidInput("c and distance floor must be positive".into()));
        }
        let mut h = Vec::with_capacity(n);
        let mut indicators = Vec::with_capacity(n);
        let mut nearest = Vec::with_capacity(n);
        for d in 0..n {
            let (best, dmin) = (0..sources)
                .map(|s| (s, distances[s][d]))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap_or((0, f64::INFINITY));
            if !dmin.is_finite() {
                return Err(Error::Unreachable(d));
            }
            let tied: Vec<usize> = (0..sources)
                .filter(|&s| distances[s][d] <= dmin + opts.tie_tolerance)
                .collect();
            let k = tied.len() as f64;
            let dist = dmin.max(opts.distance_floor);
            h.push(k * opts.c / (dist * dist));
            indicators.push(tied.into_iter().map(|s| (s, 1.0 / k)).collect());
            nearest.push((best, dmin));
        }
        Ok(Self {
            sources,
            h,
            indicators,
            nearest,
        })
    }

    pub fn source_count(&self) -> usize {
        self.sources
    }

    pub fn vertex_count(&self) -> usize {
        self.h.len()
    }

    pub fn h_diag(&self) -> &[f64] {
        &self.h
    }

    /// Nonzero indicator entries `(s, p_{s,d})` of vertex `d`.
    pub fn indicators(&self, d: usize) -> &[(usize, f64)] {
        &self.indicators[d]
    }

    /// Dense indicator column `p_s` over vertices.
    pub fn indicator(&self, s: usize) -> Vec<f64> {
        self.indicators
            .iter()
            .map(|row| row.iter().find(|e| e.0 == s).map_or(0.0, |e| e.1))
            .collect()
    }

    /// Per vertex: (nearest source, unfloored distance).
    pub fn nearest(&self) -> &[(usize, f64)] {
        &self.nearest
    }
}

/// Geodesic distance fields from every marker (markers snap to their
/// nearest triangle corner).
pub fn marker_distances(mesh: &TriangleMesh, markers: &SparseMarkerSet) -> Result<Vec<Vec<f64>>> {
    markers.check(mesh, None)?;
    Ok(markers
        .source_vertices(mesh)
        .into_par_iter()
        .map(|v| vertex_distances(mesh, v))
        .collect())
}

pub fn build_heat_system(mesh: &TriangleMesh, markers: &SparseMarkerSet, opts: &HeatOptions) -> Result<HeatSystem> {
    HeatSystem::from_distances(&marker_distances(mesh, markers)?, opts)
}

/// Soft label matrix `L` (S × D), stored marker-major in single precision.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftLabelField {
    markers: usize,
    vertices: usize,
    values: Vec<f32>,
}

impl SoftLabelField {
    /// Admissible excursion outside `[0, 1]` and of column sums from 1.
    pub const EPS: f64 = 1e-6;

    pub fn new(markers: usize, vertices: usize, values: Vec<f32>) -> Result<Self> {
        if markers == 0 || values.len() != markers * vertices {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {markers} × {vertices} labels",
                values.len()
            )));
        }
        Ok(Self {
            markers,
            vertices,
            values,
        })
    }

    /// Assembles from per-marker weight fields `w_s`.
    pub fn from_weights(weights: &[Vec<f64>]) -> Result<Self> {
        let d = weights.first().map_or(0, Vec::len);
        if weights.iter().any(|w| w.len() != d) {
            return Err(Error::ShapeMismatch("weight fields differ in length".into()));
        }
        Self::new(weights.len(), d, weights.iter().flatten().map(|&x| x as f32).collect())
    }

    /// One-hot field from per-vertex labels.
    pub fn one_hot(markers: usize, labels: &[usize]) -> Result<Self> {
        let mut values = vec![0.0f32; markers * labels.len()];
        for (d, &s) in labels.iter().enumerate() {
            if s >= markers {
                return Err(Error::OutOfRange { index: s, len: markers });
            }
            values[s * labels.len() + d] = 1.0;
        }
        Self::new(markers, labels.len(), values)
    }

    pub fn marker_count(&self) -> usize {
        self.markers
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    #[inline]
    pub fn get(&self, s: usize, d: usize) -> f32 {
        self.values[s * self.vertices + d]
    }

    /// Field of marker `s` over all vertices.
    pub fn marker_row(&self, s: usize) -> &[f32] {
        &self.values[s * self.vertices..(s + 1) * self.vertices]
    }

    /// Label vector `l_{:,d}` of vertex `d`.
    pub fn column(&self, d: usize) -> Vec<f32> {
        (0..self.markers).map(|s| self.get(s, d)).collect()
    }

    pub fn column_sum(&self, d: usize) -> f64 {
        (0..self.markers).map(|s| f64::from(self.get(s, d))).sum()
    }

    /// Highest-affinity marker per vertex; ties go to the lower id.
    pub fn argmax(&self) -> Vec<usize> {
        (0..self.vertices)
            .map(|d| {
                let mut best = 0;
                for s in 1..self.markers {
                    if self.get(s, d) > self.get(best, d) {
                        best = s;
                    }
                }
                best
            })
            .collect()
    }

    pub fn to_hard(&self) -> Self {
        Self::one_hot(self.markers, &self.argmax()).expect("argmax in range")
    }

    /// Copy with entries clamped into `[0, 1]`.
    pub fn clamped(&self) -> Self {
        Self {
            values: self.values.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
            ..self.clone()
        }
    }

    /// Labels restricted to a subset of vertices.
    pub fn select_vertices(&self, vertices: &[usize]) -> Self {
        let mut values = Vec::with_capacity(self.markers * vertices.len());
        for s in 0..self.markers {
            let row = self.marker_row(s);
            values.extend(vertices.iter().map(|&d| row[d]));
        }
        Self {
            markers: self.markers,
            vertices: vertices.len(),
            values,
        }
    }

    /// Checks the range and partition-of-unity invariants.
    pub fn validate(&self, eps: f64) -> Result<()> {
        for d in 0..self.vertices {
            let sum = self.column_sum(d);
            if (sum - 1.0).abs() > eps {
                return Err(Error::UnnormalizedTargets { column: d, sum });
            }
        }
        if let Some(v) = self
            .values
            .iter()
            .map(|&v| f64::from(v))
            .find(|v| *v < -eps || *v > 1.0 + eps || !v.is_finite())
        {
            return Err(Error::InvalidInput(format!("label entry {v} outside [0, 1]")));
        }
        Ok(())
    }
}

/// Solves the heat system for every source, sharing one factorization.
pub fn solve_all(mesh: &TriangleMesh, system: &HeatSystem, opts: &HeatOptions) -> Result<Vec<Vec<f64>>> {
    let solver = HeatSolver::new(mesh, system, opts)?;
    (0..system.source_count())
        .into_par_iter()
        .map(|s| solver.solve(s))
        .collect()
}

/// Soft labels of every vertex with respect to the marker set.
pub fn densify(mesh: &TriangleMesh, markers: &SparseMarkerSet, opts: &HeatOptions) -> Result<SoftLabelField> {
    let system = build_heat_system(mesh, markers, opts)?;
    SoftLabelField::from_weights(&solve_all(mesh, &system, opts)?)
}
