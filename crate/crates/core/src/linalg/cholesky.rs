use std::collections::VecDeque;

use super::CsrMatrix;
use crate::error::{Error, Result};

/// Reverse Cuthill–McKee ordering of a symmetric sparsity pattern.
///
/// Returns `perm` with `perm[new] = old`. Each connected component is started
/// from a pseudo-peripheral vertex found by repeated BFS.
pub fn reverse_cuthill_mckee(matrix: &CsrMatrix) -> Vec<usize> {
    let n = matrix.dim();
    let degree: Vec<usize> = (0..n).map(|i| matrix.row(i).0.len()).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);

    let bfs_levels = |start: usize, mark: &mut Vec<usize>, stamp: usize| -> (usize, usize) {
        // returns (farthest vertex with min degree in last level, depth)
        let mut queue = VecDeque::from([(start, 0usize)]);
        mark[start] = stamp;
        let mut last_level = 0;
        let mut candidate = start;
        while let Some((v, lvl)) = queue.pop_front() {
            if lvl > last_level || (lvl == last_level && degree[v] < degree[candidate]) {
                last_level = lvl;
                candidate = v;
            }
            for &u in matrix.row(v).0 {
                if mark[u] != stamp {
                    mark[u] = stamp;
                    queue.push_back((u, lvl + 1));
                }
            }
        }
        (candidate, last_level)
    };

    let mut mark = vec![usize::MAX; n];
    let mut stamp = 0usize;
    for seed in 0..n {
        if visited[seed] {
            continue;
        }
        // pseudo-peripheral start
        let mut start = seed;
        let (mut far, mut depth) = bfs_levels(start, &mut mark, stamp);
        stamp += 1;
        for _ in 0..8 {
            let (next_far, next_depth) = bfs_levels(far, &mut mark, stamp);
            stamp += 1;
            if next_depth <= depth {
                break;
            }
            start = far;
            far = next_far;
            depth = next_depth;
        }
        let start = if depth > 0 { far } else { start };

        let begin = order.len();
        visited[start] = true;
        order.push(start);
        let mut head = begin;
        let mut nbrs = Vec::new();
        while head < order.len() {
            let v = order[head];
            head += 1;
            nbrs.clear();
            nbrs.extend(matrix.row(v).0.iter().copied().filter(|&u| !visited[u]));
            nbrs.sort_by_key(|&u| (degree[u], u));
            for &u in &nbrs {
                visited[u] = true;
                order.push(u);
            }
        }
    }
    order.reverse();
    order
}

/// Cholesky factor `P A Pᵀ = L Lᵀ` stored row-wise over each row's envelope.
#[derive(Debug, Clone)]
pub struct EnvelopeCholesky {
    perm: Vec<usize>,
    inv_perm: Vec<usize>,
    /// first stored column of each (permuted) row
    first: Vec<usize>,
    /// start of each row's storage in `values`; row `i` covers columns `first[i]..=i`
    start: Vec<usize>,
    values: Vec<f64>,
}

impl EnvelopeCholesky {
    /// Factorizes a symmetric positive definite matrix.
    pub fn factor(matrix: &CsrMatrix) -> Result<Self> {
        let n = matrix.dim();
        let perm = reverse_cuthill_mckee(matrix);
        let mut inv_perm = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv_perm[old] = new;
        }

        let mut first = vec![0usize; n];
        for (i, &old) in perm.iter().enumerate() {
            first[i] = matrix
                .row(old)
                .0
                .iter()
                .map(|&c| inv_perm[c])
                .filter(|&c| c <= i)
                .min()
                .unwrap_or(i);
        }
        let mut start = Vec::with_capacity(n + 1);
        let mut total = 0usize;
        for i in 0..n {
            start.push(total);
            total += i - first[i] + 1;
        }
        start.push(total);
        let mut values = vec![0.0; total];
        for (i, &old) in perm.iter().enumerate() {
            let (cols, vals) = matrix.row(old);
            for (&c, &v) in cols.iter().zip(vals) {
                let j = inv_perm[c];
                if j <= i {
                    values[start[i] + j - first[i]] = v;
                }
            }
        }

        for i in 0..n {
            let fi = first[i];
            let (done, rest) = values.split_at_mut(start[i]);
            let row_i = &mut rest[..i - fi + 1];
            for j in fi..i {
                let fj = first[j];
                let k0 = fi.max(fj);
                let row_j = &done[start[j]..start[j] + (j - fj + 1)];
                let a = &row_i[k0 - fi..j - fi];
                let b = &row_j[k0 - fj..j - fj];
                let s: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                let ljj = row_j[j - fj];
                row_i[j - fi] = (row_i[j - fi] - s) / ljj;
            }
            let s: f64 = row_i[..i - fi].iter().map(|x| x * x).sum();
            let pivot = row_i[i - fi] - s;
            if !(pivot > 0.0) || !pivot.is_finite() {
                return Err(Error::NotPositiveDefinite { row: perm[i], pivot });
            }
            row_i[i - fi] = pivot.sqrt();
        }

        Ok(Self {
            perm,
            inv_perm,
            first,
            start,
            values,
        })
    }

    pub fn dim(&self) -> usize {
        self.perm.len()
    }

    /// Number of stored factor entries.
    pub fn envelope_size(&self) -> usize {
        self.values.len()
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.dim();
        assert_eq!(rhs.len(), n);
        let mut y: Vec<f64> = self.perm.iter().map(|&old| rhs[old]).collect();
        // L y = b
        for i in 0..n {
            let fi = self.first[i];
            let row = &self.values[self.start[i]..self.start[i + 1]];
            let s: f64 = row[..i - fi].iter().zip(&y[fi..i]).map(|(a, b)| a * b).sum();
            y[i] = (y[i] - s) / row[i - fi];
        }
        // Lᵀ x = y, column-oriented over the row storage
        for i in (0..n).rev() {
            let fi = self.first[i];
            let row = &self.values[self.start[i]..self.start[i + 1]];
            y[i] /= row[i - fi];
            let xi = y[i];
            for (yk, lik) in y[fi..i].iter_mut().zip(&row[..i - fi]) {
                *yk -= lik * xi;
            }
        }
        (0..n).map(|old| y[self.inv_perm[old]]).collect()
    }
}

#[cfg(test)]
mod tests {
    use nalgebra::{DMatrix, DVector};

    use super::*;
    use crate::linalg::testing::grid_spd;

    fn dense(m: &CsrMatrix) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(m.dim(), m.dim());
        for (i, j, v) in m.triplets() {
            d[(i, j)] = v;
        }
        d
    }

    #[test]
    fn rcm_is_a_permutation() {
        let m = grid_spd(9, 7, &|_| 0.1);
        let mut p = reverse_cuthill_mckee(&m);
        p.sort_unstable();
        assert_eq!(p, (0..63).collect::<Vec<_>>());
    }

    #[test]
    fn matches_dense_solve() {
        let m = grid_spd(12, 9, &|i| if i % 17 == 0 { 1e8 } else { 0.01 * (i % 5) as f64 + 1e-3 });
        let chol = EnvelopeCholesky::factor(&m).unwrap();
        let b: Vec<f64> = (0..m.dim()).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
        let x = chol.solve(&b);
        let oracle = dense(&m).lu().solve(&DVector::from_vec(b.clone())).unwrap();
        for (a, e) in x.iter().zip(oracle.iter()) {
            assert!((a - e).abs() <= 1e-9 * e.abs().max(1.0), "{a} vs {e}");
        }
    }

    #[test]
    fn rejects_indefinite() {
        let m = CsrMatrix::from_rows(vec![vec![(0, 1.0), (1, 2.0)], vec![(0, 2.0), (1, 1.0)]]);
        assert!(matches!(
            EnvelopeCholesky::factor(&m),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn handles_disconnected_blocks() {
        let m = CsrMatrix::from_rows(vec![
            vec![(0, 2.0), (1, -1.0)],
            vec![(0, -1.0), (1, 2.0)],
            vec![(2, 5.0)],
        ]);
        let x = EnvelopeCholesky::factor(&m).unwrap().solve(&[1.0, 1.0, 10.0]);
        assert!((x[0] - 1.0).abs() < 1e-14 && (x[1] - 1.0).abs() < 1e-14);
        assert!((x[2] - 2.0).abs() < 1e-14);
    }
}
