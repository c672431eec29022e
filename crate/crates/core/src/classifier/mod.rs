//! Sparse volumetric soft-label classifier: voxelization, a residual U-Net
//! over occupied voxels, soft cross-entropy, and the training loop.
//!
//! Predictions are made per voxel and broadcast to the voxel's points.

mod checkpoint;
mod gradcheck;
mod loss;
mod net;
mod optim;
mod train;
mod voxel;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use net::{Hierarchy, Layout, Network, Tape};

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use gradcheck::{gradient_check, GradCheckOptions, GradientCheckReport, GradientSample};
pub use loss::{soft_cross_entropy, softmax_in_place, TARGET_SUM_TOLERANCE};
pub use net::ModelConfig;
pub use optim::{Optimizer, OptimizerKind};
pub use train::{train, LossCurve, TrainConfig, TrainMode, TrainingTemplate};
pub use voxel::{voxelize, SparseVoxelGrid, VoxelTargets};

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    config: ModelConfig,
    layout: Layout,
    params: Vec<f64>,
}

impl ClassifierModel {
    /// Freshly initialized model; the same seed gives the same parameters.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let params = layout.init(seed);
        Ok(Self { config, layout, params })
    }

    pub(crate) fn from_params(config: ModelConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if params.len() != layout.params {
            return Err(Error::ShapeMismatch(format!(
                "{} parameters for an architecture with {}",
                params.len(),
                layout.params
            )));
        }
        Ok(Self { config, layout, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn marker_count(&self) -> usize {
        self.config.markers
    }

    pub fn voxel_size(&self) -> f64 {
        self.config.voxel_size
    }

    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn check_grid(&self, grid: &SparseVoxelGrid) -> Result<()> {
        let (expected, actual) = (self.config.voxel_size, grid.voxel_size());
        if (expected - actual).abs() > 1e-9 * expected {
            return Err(Error::VoxelSizeMismatch { expected, actual });
        }
        Ok(())
    }

    pub(crate) fn hierarchy(&self, grid: &SparseVoxelGrid) -> Hierarchy {
        Hierarchy::new(grid.coords(), self.config.levels(), self.config.kernel)
    }

    pub(crate) fn features(&self, grid: &SparseVoxelGrid) -> Result<Vec<f64>> {
        if self.config.normals {
            grid.features_with_normals()
        } else {
            Ok(grid.features())
        }
    }

    fn network<'a>(&'a self, params: &'a [f64], hierarchy: &'a Hierarchy) -> Network<'a> {
        Network {
            layout: &self.layout,
            params,
            hierarchy,
        }
    }

    /// Logits per voxel, `voxels × S` row-major.
    pub fn forward_voxels(&self, grid: &SparseVoxelGrid) -> Result<Vec<f64>> {
        self.check_grid(grid)?;
        let h = self.hierarchy(grid);
        Ok(self.network(&self.params, &h).forward(&self.features(grid)?).0)
    }

    /// Logits per input point, `S × N` (voxel output broadcast to its points).
    pub fn forward(&self, grid: &SparseVoxelGrid) -> Result<DMatrix<f64>> {
        let s = self.config.markers;
        let v = self.forward_voxels(grid)?;
        let mut out = DMatrix::zeros(s, grid.point_count());
        for (j, &vox) in grid.point_voxels().iter().enumerate() {
            let vox = vox as usize;
            out.column_mut(j).copy_from_slice(&v[vox * s..(vox + 1) * s]);
        }
        Ok(out)
    }

    fn targets<'a>(&self, grid: &'a SparseVoxelGrid) -> Result<&'a VoxelTargets> {
        let t = grid
            .targets()
            .ok_or_else(|| Error::InvalidInput("training grid carries no labels".into()))?;
        if t.markers != self.config.markers {
            return Err(Error::ShapeMismatch(format!(
                "targets have {} markers, model predicts {}",
                t.markers, self.config.markers
            )));
        }
        Ok(t)
    }

    pub(crate) fn loss_with(
        &self,
        params: &[f64],
        h: &Hierarchy,
        grid: &SparseVoxelGrid,
    ) -> Result<(f64, Tape, Vec<f64>)> {
        let t = self.targets(grid)?;
        let (logits, tape) = self.network(params, h).forward(&self.features(grid)?);
        let (loss, dlogits) = loss::weighted_cross_entropy(&logits, &t.values, &t.weights, t.markers);
        Ok((loss, tape, dlogits))
    }

    /// Mean per-point soft cross-entropy on a labeled grid and its gradient
    /// w.r.t. every parameter.
    pub fn loss_and_gradient(&self, grid: &SparseVoxelGrid) -> Result<(f64, Vec<f64>)> {
        self.check_grid(grid)?;
        let h = self.hierarchy(grid);
        let (loss, tape, dlogits) = self.loss_with(&self.params, &h, grid)?;
        Ok((loss, self.network(&self.params, &h).backward(&tape, &dlogits)))
    }

    /// One optimizer step on the averaged gradient of `batch`; returns the
    /// mean loss before the update.
    pub fn train_step(&mut self, batch: &[SparseVoxelGrid], optimizer: &mut Optimizer) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::InvalidInput("empty training batch".into()));
        }
        let mut total = 0.0;
        let mut grad = vec![0.0; self.params.len()];
        for grid in batch {
            let (loss, g) = self.loss_and_gradient(grid)?;
            total += loss;
            grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        }
        let k = batch.len() as f64;
        grad.iter_mut().for_each(|g| *g /= k);
        let loss = total / k;
        if loss.is_finite() {
            optimizer.step(&mut self.params, &grad);
        }
        Ok(loss)
    }
}
