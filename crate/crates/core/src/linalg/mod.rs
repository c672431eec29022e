//! Sparse symmetric linear algebra for the heat-equilibrium solves.
//!
//! Two solvers share the [`CsrMatrix`] type: an envelope (skyline) Cholesky
//! factorization under a reverse Cuthill–McKee ordering, whose factor is
//! reused across right-hand sides, and Jacobi-preconditioned conjugate
//! gradients.

mod cg;
mod cholesky;

pub use cg::{conjugate_gradient, CgOptions, CgOutcome};
pub use cholesky::{reverse_cuthill_mckee, EnvelopeCholesky};

/// Square sparse matrix in compressed-row form with sorted column indices.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    offsets: Vec<usize>,
    cols: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from per-row `(col, value)` lists. Columns must be sorted and unique.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let mut offsets = Vec::with_capacity(rows.len() + 1);
        let nnz = rows.iter().map(Vec::len).sum();
        let mut cols = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        offsets.push(0);
        for row in rows {
            debug_assert!(row.windows(2).all(|w| w[0].0 < w[1].0));
            for (c, v) in row {
                cols.push(c);
                values.push(v);
            }
            offsets.push(cols.len());
        }
        Self { offsets, cols, values }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.offsets[i]..self.offsets[i + 1];
        (&self.cols[r.clone()], &self.values[r])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.get(i, i)).collect()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim()];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let (cols, vals) = self.row(i);
            *yi = cols.iter().zip(vals).map(|(&c, &v)| v * x[c]).sum();
        }
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.dim()).flat_map(move |i| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).map(move |(&c, &v)| (i, c, v))
        })
    }

    /// `self + diag(d)`; every diagonal entry must already be stored.
    pub fn add_diagonal(&self, d: &[f64]) -> Self {
        assert_eq!(d.len(), self.dim());
        let mut out = self.clone();
        for (i, &di) in d.iter().enumerate() {
            let r = out.offsets[i]..out.offsets[i + 1];
            let k = out.cols[r.clone()].binary_search(&i).expect("diagonal entry present");
            out.values[r.start + k] += di;
        }
        out
    }

    /// `diag(s) · self`, scaling each row.
    pub fn scale_rows(&self, s: &[f64]) -> Self {
        let mut out = self.clone();
        for (i, &si) in s.iter().enumerate() {
            for v in &mut out.values[out.offsets[i]..out.offsets[i + 1]] {
                *v *= si;
            }
        }
        out
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
