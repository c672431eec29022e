use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ClassifierModel, SparseVoxelGrid};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckOptions {
    pub samples: usize,
    pub seed: u64,
    /// Central-difference step.
    pub step: f64,
    /// Gradients smaller than this are compared absolutely.
    pub abs_floor: f64,
    /// Restrict sampling to bias parameters.
    pub biases_only: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            samples: 128,
            seed: 0,
            step: 1e-5,
            abs_floor: 1e-6,
            biases_only: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientSample {
    pub layer: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheckReport {
    pub samples: Vec<GradientSample>,
    /// Samples dropped because every tried step crossed a ReLU kink.
    pub skipped: usize,
    pub max_rel_error: f64,
}

/// Compares backpropagated gradients with central differences on randomly
/// sampled parameters. A difference is only used when the ReLU sign pattern
/// is identical at both evaluation points; otherwise the step shrinks tenfold,
/// up to three times.
pub fn gradient_check(
    model: &ClassifierModel,
    grid: &SparseVoxelGrid,
    opts: &GradCheckOptions,
) -> Result<GradientCheckReport> {
    model.check_grid(grid)?;
    let h = model.hierarchy(grid);
    let base = model.params().to_vec();
    let (_, tape, dlogits) = model.loss_with(&base, &h, grid)?;
    let pattern = tape.relu_pattern();
    let grad = model.network(&base, &h).backward(&tape, &dlogits);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let convs = &model.layout.convs;
    let mut samples = Vec::with_capacity(opts.samples);
    let mut skipped = 0;
    let mut params = base.clone();
    for _ in 0..opts.samples {
        let conv = &convs[rng.gen_range(0..convs.len())];
        let index = if opts.biases_only {
            conv.bias_offset() + rng.gen_range(0..conv.cout)
        } else {
            conv.offset + rng.gen_range(0..conv.len())
        };
        let mut step = opts.step;
        let mut numeric = None;
        for _ in 0..3 {
            params[index] = base[index] + step;
            let (lp, tp, _) = model.loss_with(&params, &h, grid)?;
            params[index] = base[index] - step;
            let (lm, tm, _) = model.loss_with(&params, &h, grid)?;
            params[index] = base[index];
            if tp.relu_pattern() == pattern && tm.relu_pattern() == pattern {
                numeric = Some((lp - lm) / (2.0 * step));
                break;
            }
            step /= 10.0;
        }
        let Some(numeric) = numeric else {
            skipped += 1;
            continue;
        };
        let analytic = grad[index];
        let rel_error = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(opts.abs_floor);
        samples.push(GradientSample {
            layer: conv.name.clone(),
            index,
            analytic,
            numeric,
            rel_error,
        });
    }
    let max_rel_error = samples.iter().map(|s| s.rel_error).fold(0.0, f64::max);
    Ok(GradientCheckReport {
        samples,
        skipped,
        max_rel_error,
    })
}
