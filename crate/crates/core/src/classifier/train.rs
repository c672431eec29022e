use std::io::Write;
use std::path::Path;

use nalgebra::{Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{save_checkpoint, voxelize, ClassifierModel, Optimizer, OptimizerKind, SparseVoxelGrid};
use crate::error::{Error, Result};
use crate::mesh::TriangleMesh;
use crate::render::{add_depth_noise, label_frame, render_depth, Camera, Intrinsics, LabeledPointCloud};
use crate::rig::{lbs_skin, sample_random_pose, Pose, Skeleton};
use crate::softlabel::SoftLabelField;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainMode {
    /// Full posed meshes mixed with single depth frames.
    Oneshot,
    /// Depth frames only.
    MultiviewTrain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub seed: u64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps: usize,
    /// Probability of a full posed mesh instead of a depth frame (oneshot mode).
    pub full_mesh_fraction: f64,
    /// Probability of drawing a clip pose instead of a random one.
    pub clip_fraction: f64,
    pub voxel_size: f64,
    pub mode: TrainMode,
    pub optimizer: OptimizerKind,
    /// Train on one-hot argmax targets instead of soft labels.
    pub hard_labels: bool,
    /// Random poses use seeds drawn from `0..pool`; fresh seeds if unset.
    pub pose_pool: Option<u64>,
    /// Camera distance range in meters for depth frames.
    pub view_distance: [f64; 2],
    /// Camera elevation range in degrees for depth frames.
    pub view_elevation_deg: [f64; 2],
    pub intrinsics: Intrinsics,
    /// Depth noise scale (σ = scale · z²); 0 disables noise.
    pub depth_noise: f64,
    /// Write a checkpoint every this many steps; 0 disables.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            learning_rate: 1e-3,
            batch_size: 1,
            steps: 1000,
            full_mesh_fraction: 0.5,
            clip_fraction: 0.0,
            voxel_size: 0.02,
            mode: TrainMode::Oneshot,
            optimizer: OptimizerKind::default(),
            hard_labels: false,
            pose_pool: None,
            view_distance: [2.0, 3.0],
            view_elevation_deg: [-20.0, 35.0],
            intrinsics: Intrinsics::default(),
            depth_noise: 0.0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, x: f64| {
            if (0.0..=1.0).contains(&x) {
                Ok(())
            } else {
                Err(Error::InvalidInput(format!("{name} must lie in [0, 1], got {x}")))
            }
        };
        unit("full_mesh_fraction", self.full_mesh_fraction)?;
        unit("clip_fraction", self.clip_fraction)?;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "invalid learning rate {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidInput("batch size must be positive".into()));
        }
        if !(self.voxel_size > 0.0) {
            return Err(Error::InvalidInput(format!("invalid voxel size {}", self.voxel_size)));
        }
        let [d0, d1] = self.view_distance;
        if !(d0 > 0.0 && d0 <= d1) {
            return Err(Error::InvalidInput(format!("invalid view distance range {d0}..{d1}")));
        }
        let [e0, e1] = self.view_elevation_deg;
        if !(e0 <= e1 && e0 > -90.0 && e1 < 90.0) {
            return Err(Error::InvalidInput(format!("invalid elevation range {e0}..{e1}")));
        }
        if self.pose_pool == Some(0) {
            return Err(Error::InvalidInput("pose pool must be nonempty".into()));
        }
        self.intrinsics.validate()
    }

    pub fn effective_full_mesh_fraction(&self) -> f64 {
        match self.mode {
            TrainMode::Oneshot => self.full_mesh_fraction,
            TrainMode::MultiviewTrain => 0.0,
        }
    }
}

/// An annotated template: rest mesh, weighted skeleton and soft labels.
#[derive(Debug, Clone)]
pub struct TrainingTemplate {
    pub mesh: TriangleMesh,
    pub skeleton: Skeleton,
    pub labels: SoftLabelField,
    /// Poses taken from motion clips.
    pub clip_poses: Vec<Pose>,
}

impl TrainingTemplate {
    pub fn new(mesh: TriangleMesh, skeleton: Skeleton, labels: SoftLabelField) -> Result<Self> {
        if skeleton.weights().is_none() {
            return Err(Error::MissingWeights);
        }
        if labels.vertex_count() != mesh.vertex_count() {
            return Err(Error::ShapeMismatch(format!(
                "{} labeled vertices for a mesh of {}",
                labels.vertex_count(),
                mesh.vertex_count()
            )));
        }
        Ok(Self {
            mesh,
            skeleton,
            labels,
            clip_poses: Vec::new(),
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossCurve {
    /// Mean batch loss at each step, before that step's update.
    pub losses: Vec<f64>,
}

impl LossCurve {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
        let mut text = String::from("step,loss\n");
        for (i, l) in self.losses.iter().enumerate() {
            text.push_str(&format!("{i},{l}\n"));
        }
        f.write_all(text.as_bytes())
            .and_then(|_| f.flush())
            .map_err(|e| Error::io(path, e))
    }
}

fn uniform(rng: &mut ChaCha8Rng, [a, b]: [f64; 2]) -> f64 {
    a + (b - a) * rng.gen::<f64>()
}

/// A random camera around `center`, looking at it with world +y up.
pub(crate) fn random_camera(rng: &mut ChaCha8Rng, center: &Point3<f64>, config: &TrainConfig) -> Result<Camera> {
    let az = rng.gen::<f64>() * std::f64::consts::TAU;
    let el = uniform(rng, config.view_elevation_deg).to_radians();
    let dist = uniform(rng, config.view_distance);
    let dir = Vector3::new(el.cos() * az.cos(), el.sin(), el.cos() * az.sin());
    Camera::look_at(config.intrinsics, &(center + dir * dist), center, &Vector3::y())
}

/// Draws one augmented training example.
pub(crate) fn sample_example(
    rng: &mut ChaCha8Rng,
    templates: &[TrainingTemplate],
    config: &TrainConfig,
) -> Result<SparseVoxelGrid> {
    let t = &templates[rng.gen_range(0..templates.len())];
    let pose = if !t.clip_poses.is_empty() && rng.gen::<f64>() < config.clip_fraction {
        t.clip_poses[rng.gen_range(0..t.clip_poses.len())].clone()
    } else {
        let seed = match config.pose_pool {
            Some(n) => rng.gen_range(0..n),
            None => rng.gen(),
        };
        sample_random_pose(&t.skeleton, seed)?
    };
    let posed = lbs_skin(&t.mesh, &t.skeleton, &pose)?;
    let cloud = if rng.gen::<f64>() < config.effective_full_mesh_fraction() {
        LabeledPointCloud::from_mesh(&posed, Some(t.labels.clone()))?
    } else {
        let center = posed.centroid();
        let mut cloud = None;
        for _ in 0..8 {
            let cam = random_camera(rng, &center, config)?;
            let mut frame = render_depth(&posed, &cam);
            if config.depth_noise > 0.0 {
                add_depth_noise(&mut frame, config.depth_noise, rng.gen());
            }
            if frame.valid_pixels() > 0 {
                cloud = Some(label_frame(&frame, &posed, &t.labels)?.transformed(&cam.world_from_camera()));
                break;
            }
        }
        cloud.ok_or(Error::Invisible)?
    };
    let mut grid = voxelize(&cloud, config.voxel_size)?;
    if config.hard_labels {
        grid.harden_targets();
    }
    Ok(grid)
}

/// Trains `model` in place with on-the-fly augmentation: every step skins a
/// sampled pose and feeds either the full posed mesh or one rendered depth
/// frame. Deterministic for a fixed config.
pub fn train(
    model: &mut ClassifierModel,
    templates: &[TrainingTemplate],
    config: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<LossCurve> {
    config.validate()?;
    if templates.is_empty() {
        return Err(Error::InvalidInput("training needs at least one template".into()));
    }
    let (expected, actual) = (model.voxel_size(), config.voxel_size);
    if (expected - actual).abs() > 1e-9 * expected {
        return Err(Error::VoxelSizeMismatch { expected, actual });
    }
    for t in templates {
        if t.labels.marker_count() != model.marker_count() {
            return Err(Error::ShapeMismatch(format!(
                "template has {} markers, model predicts {}",
                t.labels.marker_count(),
                model.marker_count()
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut optimizer = Optimizer::new(config.optimizer, config.learning_rate, model.parameter_count());
    let mut curve = LossCurve::default();
    for step in 0..config.steps {
        let batch = (0..config.batch_size)
            .map(|_| sample_example(&mut rng, templates, config))
            .collect::<Result<Vec<_>>>()?;
        let loss = model.train_step(&batch, &mut optimizer)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { step, loss });
        }
        curve.losses.push(loss);
        if step % 50 == 0 {
            log::info!("step {step}: loss {loss:.5}");
        }
        if let Some(dir) = checkpoint_dir {
            if config.checkpoint_every > 0 && (step + 1) % config.checkpoint_every == 0 {
                save_checkpoint(model, dir.join(format!("step_{:06}.vmck", step + 1)))?;
            }
        }
    }
    Ok(curve)
}
