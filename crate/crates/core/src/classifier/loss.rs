use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Tolerance on target column sums.
pub const TARGET_SUM_TOLERANCE: f64 = 1e-4;

/// Numerically stable softmax of one logit vector, in place.
pub fn softmax_in_place(z: &mut [f64]) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in z.iter_mut() {
        *x = (*x - m).exp();
        sum += *x;
    }
    z.iter_mut().for_each(|x| *x /= sum);
}

/// `Σ_v w_v · (−Σ_s t_vs log softmax(z_v)_s)` over rows of `s` entries,
/// with its gradient w.r.t. `z`.
pub(crate) fn weighted_cross_entropy(z: &[f64], t: &[f64], w: &[f64], s: usize) -> (f64, Vec<f64>) {
    let mut loss = 0.0;
    let mut grad = vec![0.0; z.len()];
    for (((zr, tr), &wv), gr) in z
        .chunks_exact(s)
        .zip(t.chunks_exact(s))
        .zip(w)
        .zip(grad.chunks_exact_mut(s))
    {
        let m = zr.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + zr.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
        let tsum: f64 = tr.iter().sum();
        let dot: f64 = zr.iter().zip(tr).map(|(a, b)| a * b).sum();
        loss += wv * (lse * tsum - dot);
        for ((g, &zi), &ti) in gr.iter_mut().zip(zr).zip(tr) {
            *g = wv * (tsum * (zi - lse).exp() - ti);
        }
    }
    (loss, grad)
}

/// Mean soft cross-entropy over the `N` columns of `S × N` logits, using
/// `log softmax` per column. Returns the loss and its gradient, which is
/// `(softmax(logits) − targets) / N` column-wise.
pub fn soft_cross_entropy(logits: &DMatrix<f64>, targets: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
    if logits.shape() != targets.shape() {
        return Err(Error::ShapeMismatch(format!(
            "logits are {:?}, targets are {:?}",
            logits.shape(),
            targets.shape()
        )));
    }
    let (s, n) = logits.shape();
    if s == 0 || n == 0 {
        return Err(Error::InvalidInput("cross-entropy needs a nonempty batch".into()));
    }
    for (j, col) in targets.column_iter().enumerate() {
        let sum = col.sum();
        if !((sum - 1.0).abs() <= TARGET_SUM_TOLERANCE) {
            return Err(Error::UnnormalizedTargets { column: j, sum });
        }
    }
    // column-major storage puts each column contiguously
    let w = vec![1.0 / n as f64; n];
    let (loss, grad) = weighted_cross_entropy(logits.as_slice(), targets.as_slice(), &w, s);
    Ok((loss, DMatrix::from_vec(s, n, grad)))
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn uniform_gives_log_s() {
        let logits = DMatrix::from_element(99, 4, 0.3);
        let targets = DMatrix::from_element(99, 4, 1.0 / 99.0);
        let (loss, _) = soft_cross_entropy(&logits, &targets).unwrap();
        assert!((loss - 99f64.ln()).abs() < 1e-12);
        assert!((loss - 4.5951).abs() < 1e-4);
    }

    #[test]
    fn stationary_at_softmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let logits = DMatrix::from_fn(6, 3, |_, _| rng.gen_range(-2.0..2.0));
        let mut t = logits.clone();
        for mut c in t.column_iter_mut() {
            softmax_in_place(c.as_mut_slice());
        }
        let (_, g) = soft_cross_entropy(&logits, &t).unwrap();
        assert!(g.amax() < 1e-15);
    }

    #[test]
    fn matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let logits = DMatrix::from_fn(5, 3, |_, _| rng.gen_range(-3.0..3.0));
        let mut t = DMatrix::from_fn(5, 3, |_, _| rng.gen_range(0.0..1.0));
        for mut c in t.column_iter_mut() {
            let s = c.sum();
            c /= s;
        }
        let (_, g) = soft_cross_entropy(&logits, &t).unwrap();
        let h = 1e-5;
        for i in 0..15 {
            let mut p = logits.clone();
            p[i] += h;
            let mut m = logits.clone();
            m[i] -= h;
            let fd = (soft_cross_entropy(&p, &t).unwrap().0 - soft_cross_entropy(&m, &t).unwrap().0) / (2.0 * h);
            let rel = (fd - g[i]).abs() / g[i].abs().max(fd.abs());
            assert!(rel <= 1e-6, "entry {i}: analytic {} numeric {fd}", g[i]);
        }
    }

    #[test]
    fn rejects_unnormalized_targets() {
        let logits = DMatrix::zeros(3, 2);
        let t = DMatrix::from_element(3, 2, 0.4);
        assert!(matches!(
            soft_cross_entropy(&logits, &t),
            Err(Error::UnnormalizedTargets { column: 0, .. })
        ));
    }

    #[test]
    fn loss_is_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let logits = DMatrix::from_fn(4, 5, |_, _| rng.gen_range(-10.0..10.0));
            let mut t = DMatrix::from_fn(4, 5, |_, _| rng.gen_range(0.0..1.0));
            for mut c in t.column_iter_mut() {
                let s = c.sum();
                c /= s;
            }
            assert!(soft_cross_entropy(&logits, &t).unwrap().0 >= 0.0);
        }
    }
}
