use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Subcommand, ValueEnum};
use serde_json::json;

use vmark::classifier::{
    load_checkpoint, save_checkpoint, train, ClassifierModel, ModelConfig, OptimizerKind, TrainConfig, TrainMode,
    TrainingTemplate,
};
use vmark::correspondence::{
    emit_report, eval_geodesic_error, match_labels, read_correspondence_map, read_index_pairs,
    write_correspondence_map, ErrorReport, MatchMetric, Normalization,
};
use vmark::inference::{
    bench_oneshot, infer_multiview, infer_oneshot, write_prediction, InferenceInput, MultiviewOptions,
};
use vmark::mesh::io::{load_mesh, read_point_ply, save_mesh};
use vmark::mesh::TriangleMesh;
use vmark::render::{
    add_depth_noise, backproject, fit_view_distance, label_frame, read_depth_png, render_depth, sample_viewpoints,
    write_depth_png, write_labeled_cloud, Intrinsics, LabeledPointCloud, PointSource, ViewStrategy,
};
use vmark::rig::{
    lbs_skin, load_motion_clip, load_skeleton, place_sparse_markers, random_pose_clip, read_marker_sidecar,
    sample_random_pose, save_skeleton, write_marker_sidecar, write_motion_clip, PlacementOptions, Skeleton,
    SparseMarkerSet,
};
use vmark::softlabel::{
    densify, export_labels, read_labels, write_provenance_sidecar, ExportMode, HeatOptions, LaplacianNormalization,
    SolverKind,
};
use vmark::synthetic::{humanoid, HumanoidOptions};

/// What a stage read, wrote and reported.
#[derive(Debug, Default)]
pub struct Outcome {
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub seed: Option<u64>,
    pub summary: serde_json::Value,
}

impl Outcome {
    fn planned(inputs: Vec<PathBuf>, outputs: Vec<PathBuf>, seed: Option<u64>) -> Self {
        Self {
            inputs,
            outputs,
            seed,
            summary: json!(null),
        }
    }
}

fn require_inputs(paths: &[&Path]) -> Result<Vec<PathBuf>> {
    for p in paths {
        ensure!(p.exists(), "input {} does not exist", p.display());
    }
    Ok(paths.iter().map(|p| p.to_path_buf()).collect())
}

fn read_mesh(path: &Path) -> Result<TriangleMesh> {
    let (mesh, report) = load_mesh(path, None)?;
    if report.warnings() > 0 {
        log::warn!(
            "{}: load-time cleanup made {} repairs",
            path.display(),
            report.warnings()
        );
    }
    Ok(mesh)
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    Ok(())
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

#[derive(Debug, Clone, Args)]
pub struct CameraArgs {
    /// Image width in pixels.
    #[arg(long, default_value_t = 320)]
    pub width: usize,
    /// Image height in pixels.
    #[arg(long, default_value_t = 288)]
    pub height: usize,
    /// Focal length in pixels (both axes).
    #[arg(long, default_value_t = 252.0)]
    pub focal: f64,
}

impl CameraArgs {
    fn intrinsics(&self) -> Result<Intrinsics> {
        let k = Intrinsics::centered(self.width, self.height, self.focal, self.focal);
        k.validate()?;
        Ok(k)
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StrategyArg {
    Ring,
    Sphere,
}

impl From<StrategyArg> for ViewStrategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Ring => ViewStrategy::Ring,
            StrategyArg::Sphere => ViewStrategy::Sphere,
        }
    }
}

// ---------------------------------------------------------------- synth

#[derive(Debug, Subcommand)]
pub enum SynthCommand {
    /// Write the built-in rigged humanoid template (mesh + rig with skinning weights).
    Humanoid(SynthHumanoidArgs),
}

#[derive(Debug, Args)]
pub struct SynthHumanoidArgs {
    /// Surface grid spacing in meters (0.021 gives about 5k vertices).
    #[arg(long, default_value_t = 0.021)]
    pub cell: f64,
    /// Output directory for humanoid.ply and humanoid.rig.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn synth(cmd: &SynthCommand, dry_run: bool) -> Result<Outcome> {
    let SynthCommand::Humanoid(a) = cmd;
    ensure!(a.cell > 0.0 && a.cell.is_finite(), "--cell must be positive");
    let mesh_path = a.out.join("humanoid.ply");
    let rig_path = a.out.join("humanoid.rig");
    if dry_run {
        return Ok(Outcome::planned(vec![], vec![a.out.clone()], None));
    }
    let (mesh, skeleton) = humanoid(&HumanoidOptions {
        cell: a.cell,
        ..Default::default()
    })?;
    std::fs::create_dir_all(&a.out)?;
    save_mesh(&mesh, &mesh_path)?;
    save_skeleton(&skeleton, &rig_path, true)?;
    Ok(Outcome {
        inputs: vec![],
        outputs: vec![a.out.clone()],
        seed: None,
        summary: json!({ "vertices": mesh.vertex_count(), "triangles": mesh.triangle_count(), "markers": skeleton.marker_count() }),
    })
}

// ---------------------------------------------------------------- markers

#[derive(Debug, Subcommand)]
pub enum MarkersCommand {
    /// Cast rays in each bone's cylindrical frame to place the sparse markers.
    Place(MarkersPlaceArgs),
}

#[derive(Debug, Args)]
pub struct MarkersPlaceArgs {
    /// Template mesh (.ply or .obj).
    #[arg(long)]
    pub mesh: PathBuf,
    /// Rig file of the template.
    #[arg(long)]
    pub rig: PathBuf,
    /// Seed for the jitter of retried rays.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Half-width of the angular jitter on retries, in degrees.
    #[arg(long, default_value_t = 5.0)]
    pub jitter_deg: f64,
    /// Retries per missed ray.
    #[arg(long, default_value_t = 8)]
    pub retries: usize,
    /// Output marker file.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn markers(cmd: &MarkersCommand, dry_run: bool) -> Result<Outcome> {
    let MarkersCommand::Place(a) = cmd;
    let inputs = require_inputs(&[&a.mesh, &a.rig])?;
    ensure!(a.jitter_deg >= 0.0, "--jitter-deg must be nonnegative");
    if dry_run {
        return Ok(Outcome::planned(inputs, vec![a.out.clone()], Some(a.seed)));
    }
    let mesh = read_mesh(&a.mesh)?;
    let skeleton = load_skeleton(&a.rig)?;
    let report = place_sparse_markers(
        &mesh,
        &skeleton,
        PlacementOptions {
            jitter_deg: a.jitter_deg,
            retries: a.retries,
            seed: a.seed,
        },
    )?;
    for f in &report.failures {
        log::warn!("bone {}: ray at phi {:.3}, z {:.3} missed", f.bone, f.phi, f.z);
    }
    ensure_parent(&a.out)?;
    write_marker_sidecar(&report.markers, &a.out)?;
    Ok(Outcome {
        inputs,
        outputs: vec![a.out.clone()],
        seed: Some(a.seed),
        summary: json!({ "markers": report.markers.len(), "failures": report.failures.len() }),
    })
}

// ---------------------------------------------------------------- labels

#[derive(Debug, Subcommand)]
pub enum LabelsCommand {
    /// Densify sparse markers into per-vertex soft labels.
    Densify(LabelsDensifyArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum NormalizationArg {
    Lumped,
    Stiffness,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SolverArg {
    Cholesky,
    Cg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ExportArg {
    Soft,
    Hard,
    Colormap,
}

#[derive(Debug, Args)]
pub struct LabelsDensifyArgs {
    /// Template mesh (.ply or .obj).
    #[arg(long)]
    pub mesh: PathBuf,
    /// Rig used to place markers when --markers is not given.
    #[arg(long, required_unless_present = "markers")]
    pub rig: Option<PathBuf>,
    /// Previously placed marker file.
    #[arg(long, conflicts_with = "rig")]
    pub markers: Option<PathBuf>,
    /// Heat constant c.
    #[arg(long, default_value_t = 1.0)]
    pub c: f64,
    /// Laplacian weighting.
    #[arg(long, value_enum, default_value_t = NormalizationArg::Lumped)]
    pub normalization: NormalizationArg,
    /// Linear solver.
    #[arg(long, value_enum, default_value_t = SolverArg::Cholesky)]
    pub solver: SolverArg,
    /// Keep negative cotangent weights.
    #[arg(long)]
    pub no_clamp: bool,
    /// Relative residual tolerance of the solve.
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    /// Seed for marker placement.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output representation.
    #[arg(long, value_enum, default_value_t = ExportArg::Soft)]
    pub export: ExportArg,
    /// Output label file (or colored PLY with --export colormap).
    #[arg(long)]
    pub out: PathBuf,
}

pub fn labels(cmd: &LabelsCommand, dry_run: bool) -> Result<Outcome> {
    let LabelsCommand::Densify(a) = cmd;
    let mut paths: Vec<&Path> = vec![&a.mesh];
    paths.extend(a.rig.as_deref());
    paths.extend(a.markers.as_deref());
    let inputs = require_inputs(&paths)?;
    ensure!(a.c > 0.0 && a.c.is_finite(), "--c must be positive");
    ensure!(a.tol > 0.0, "--tol must be positive");
    let opts = HeatOptions {
        c: a.c,
        normalization: match a.normalization {
            NormalizationArg::Lumped => LaplacianNormalization::Lumped,
            NormalizationArg::Stiffness => LaplacianNormalization::Stiffness,
        },
        solver: match a.solver {
            SolverArg::Cholesky => SolverKind::Cholesky,
            SolverArg::Cg => SolverKind::Cg,
        },
        clamp_negative: !a.no_clamp,
        tol: a.tol,
        ..Default::default()
    };
    if dry_run {
        return Ok(Outcome::planned(inputs, vec![a.out.clone()], Some(a.seed)));
    }
    let mesh = read_mesh(&a.mesh)?;
    let markers: SparseMarkerSet = match (&a.markers, &a.rig) {
        (Some(m), _) => read_marker_sidecar(m)?,
        (None, Some(r)) => {
            let skeleton = load_skeleton(r)?;
            let report = place_sparse_markers(
                &mesh,
                &skeleton,
                PlacementOptions {
                    seed: a.seed,
                    ..Default::default()
                },
            )?;
            report.markers
        }
        (None, None) => bail!("one of --rig or --markers is required"),
    };
    let field = densify(&mesh, &markers, &opts)?;
    let max_dev = (0..field.vertex_count())
        .map(|d| (field.column_sum(d) - 1.0).abs())
        .fold(0.0, f64::max);
    ensure_parent(&a.out)?;
    let mode = match a.export {
        ExportArg::Soft => ExportMode::Soft,
        ExportArg::Hard => ExportMode::Hard,
        ExportArg::Colormap => ExportMode::Colormap,
    };
    export_labels(&field, &mesh, mode, &a.out)?;
    let mut outputs = vec![a.out.clone()];
    if !matches!(mode, ExportMode::Colormap) {
        write_provenance_sidecar(&markers, &a.out)?;
        outputs.push(with_suffix(&a.out, ".markers.txt"));
    }
    Ok(Outcome {
        inputs,
        outputs,
        seed: Some(a.seed),
        summary: json!({
            "markers": field.marker_count(),
            "vertices": field.vertex_count(),
            "max_column_sum_deviation": max_dev,
        }),
    })
}

// ---------------------------------------------------------------- pose

#[derive(Debug, Subcommand)]
pub enum PoseCommand {
    /// Sample random poses within the rig's joint limits into a motion clip.
    Sample(PoseSampleArgs),
    /// Skin the template into a pose from a clip or a seed.
    Apply(PoseApplyArgs),
}

#[derive(Debug, Args)]
pub struct PoseSampleArgs {
    /// Rig file with joint limits.
    #[arg(long)]
    pub rig: PathBuf,
    /// Seed of the first pose; pose i uses seed + i.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of poses.
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    /// Output motion clip.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PoseApplyArgs {
    /// Template mesh.
    #[arg(long)]
    pub mesh: PathBuf,
    /// Rig with skinning weights.
    #[arg(long)]
    pub rig: PathBuf,
    /// Motion clip to take the pose from.
    #[arg(long, conflicts_with = "seed")]
    pub clip: Option<PathBuf>,
    /// Keyframe index within the clip.
    #[arg(long, default_value_t = 0, requires = "clip")]
    pub frame: usize,
    /// Sample a random pose with this seed instead of reading a clip.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output posed mesh (.ply or .obj).
    #[arg(long)]
    pub out: PathBuf,
}

fn load_rig_for_mesh(rig: &Path, mesh: &TriangleMesh) -> Result<Skeleton> {
    let skeleton = load_skeleton(rig)?;
    if let Some(w) = skeleton.weights() {
        ensure!(
            w.vertex_count() == mesh.vertex_count(),
            "rig weights cover {} vertices, mesh has {}",
            w.vertex_count(),
            mesh.vertex_count()
        );
    }
    Ok(skeleton)
}

pub fn pose(cmd: &PoseCommand, dry_run: bool) -> Result<Outcome> {
    match cmd {
        PoseCommand::Sample(a) => {
            let inputs = require_inputs(&[&a.rig])?;
            ensure!(a.count > 0, "--count must be at least 1");
            if dry_run {
                return Ok(Outcome::planned(inputs, vec![a.out.clone()], Some(a.seed)));
            }
            let skeleton = load_skeleton(&a.rig)?;
            let clip = random_pose_clip(&skeleton, a.seed, a.count)?;
            ensure_parent(&a.out)?;
            write_motion_clip(&clip, &a.out)?;
            Ok(Outcome {
                inputs,
                outputs: vec![a.out.clone()],
                seed: Some(a.seed),
                summary: json!({ "poses": a.count }),
            })
        }
        PoseCommand::Apply(a) => {
            let mut paths: Vec<&Path> = vec![&a.mesh, &a.rig];
            paths.extend(a.clip.as_deref());
            let inputs = require_inputs(&paths)?;
            ensure!(
                a.clip.is_some() || a.seed.is_some(),
                "one of --clip or --seed is required"
            );
            if dry_run {
                return Ok(Outcome::planned(inputs, vec![a.out.clone()], a.seed));
            }
            let mesh = read_mesh(&a.mesh)?;
            let skeleton = load_rig_for_mesh(&a.rig, &mesh)?;
            let pose = match (&a.clip, a.seed) {
                (Some(c), _) => {
                    let poses = load_motion_clip(c)?.poses(&skeleton)?;
                    let n = poses.len();
                    poses
                        .into_iter()
                        .nth(a.frame)
                        .with_context(|| format!("--frame {} out of range for a clip of {n}", a.frame))?
                }
                (None, Some(seed)) => sample_random_pose(&skeleton, seed)?,
                (None, None) => unreachable!("checked above"),
            };
            let posed = lbs_skin(&mesh, &skeleton, &pose)?;
            ensure_parent(&a.out)?;
            save_mesh(&posed, &a.out)?;
            Ok(Outcome {
                inputs,
                outputs: vec![a.out.clone()],
                seed: a.seed,
                summary: json!({ "vertices": posed.vertex_count() }),
            })
        }
    }
}

// ---------------------------------------------------------------- render

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// Mesh to render.
    #[arg(long)]
    pub mesh: PathBuf,
    /// Per-vertex labels; labeled point clouds are written alongside the depth maps.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Number of viewpoints.
    #[arg(long, default_value_t = 40)]
    pub views: usize,
    /// Viewpoint layout.
    #[arg(long, value_enum, default_value_t = StrategyArg::Ring)]
    pub strategy: StrategyArg,
    /// Camera distance from the mesh centroid in meters; fitted to the view when omitted.
    #[arg(long)]
    pub distance: Option<f64>,
    #[command(flatten)]
    pub camera: CameraArgs,
    /// Depth noise scale: σ = scale · z² (0 disables).
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// Noise seed; view i uses seed + i.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn render(a: &RenderArgs, dry_run: bool) -> Result<Outcome> {
    let mut paths: Vec<&Path> = vec![&a.mesh];
    paths.extend(a.labels.as_deref());
    let inputs = require_inputs(&paths)?;
    let k = a.camera.intrinsics()?;
    ensure!(a.views > 0, "--views must be at least 1");
    ensure!(a.noise >= 0.0, "--noise must be nonnegative");
    if dry_run {
        return Ok(Outcome::planned(inputs, vec![a.out.clone()], Some(a.seed)));
    }
    let mesh = read_mesh(&a.mesh)?;
    let labels = a.labels.as_ref().map(read_labels).transpose()?;
    let center = mesh.centroid();
    let distance = a.distance.unwrap_or_else(|| fit_view_distance(&mesh, &center, &k));
    let cams = sample_viewpoints(a.views, a.strategy.into(), distance, &center, k)?;
    std::fs::create_dir_all(&a.out)?;
    let mut valid = Vec::with_capacity(cams.len());
    for (i, cam) in cams.iter().enumerate() {
        let mut frame = render_depth(&mesh, cam);
        if a.noise > 0.0 {
            add_depth_noise(&mut frame, a.noise, a.seed.wrapping_add(i as u64));
        }
        valid.push(frame.valid_pixels());
        write_depth_png(&frame, a.out.join(format!("view_{i:03}.png")))?;
        let cloud = match &labels {
            Some(l) => label_frame(&frame, &mesh, l)?.transformed(&cam.world_from_camera()),
            None => backproject(&frame, true),
        };
        write_labeled_cloud(&cloud, a.out.join(format!("view_{i:03}.ply")))?;
    }
    Ok(Outcome {
        inputs,
        outputs: vec![a.out.clone()],
        seed: Some(a.seed),
        summary: json!({ "views": a.views, "distance": distance, "valid_pixels": valid }),
    })
}

// ---------------------------------------------------------------- train

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Oneshot,
    MultiviewTrain,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum OptimizerArg {
    Sgd,
    Adam,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Template mesh; repeat for several templates.
    #[arg(long, required = true, action = clap::ArgAction::Append)]
    pub mesh: Vec<PathBuf>,
    /// Rig with skinning weights, one per --mesh.
    #[arg(long, required = true, action = clap::ArgAction::Append)]
    pub rig: Vec<PathBuf>,
    /// Soft labels, one per --mesh.
    #[arg(long, required = true, action = clap::ArgAction::Append)]
    pub labels: Vec<PathBuf>,
    /// Motion clip replayed for every template.
    #[arg(long, action = clap::ArgAction::Append)]
    pub clip: Vec<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1000)]
    pub steps: usize,
    /// Learning rate.
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 1)]
    pub batch_size: usize,
    /// Voxel edge length in meters.
    #[arg(long, default_value_t = 0.02)]
    pub voxel_size: f64,
    /// Fraction of examples drawn as full meshes rather than depth frames.
    #[arg(long, default_value_t = 0.5)]
    pub full_mesh_fraction: f64,
    /// Fraction of poses drawn from clips rather than sampled.
    #[arg(long, default_value_t = 0.0)]
    pub clip_fraction: f64,
    /// Distinct random poses to draw from; unbounded when omitted.
    #[arg(long)]
    pub pose_pool: Option<u64>,
    #[arg(long, value_enum, default_value_t = ModeArg::Oneshot)]
    pub mode: ModeArg,
    #[arg(long, value_enum, default_value_t = OptimizerArg::Sgd)]
    pub optimizer: OptimizerArg,
    /// SGD momentum.
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    /// Train on argmax one-hot targets.
    #[arg(long)]
    pub hard_labels: bool,
    /// Channel width per level, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [16, 32, 64])]
    pub channels: Vec<usize>,
    /// Residual blocks per level.
    #[arg(long, default_value_t = 1)]
    pub blocks: usize,
    /// Add the mean voxel normal to the input features.
    #[arg(long)]
    pub normals: bool,
    /// Depth noise scale on rendered frames: σ = scale · z² (0 disables).
    #[arg(long, default_value_t = 0.0)]
    pub depth_noise: f64,
    /// Write a checkpoint every K steps (0 disables).
    #[arg(long, default_value_t = 0)]
    pub checkpoint_every: usize,
    /// Start from this checkpoint instead of a fresh initialization.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Output model checkpoint.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn train_cmd(a: &TrainArgs, dry_run: bool) -> Result<Outcome> {
    ensure!(
        a.mesh.len() == a.rig.len() && a.mesh.len() == a.labels.len(),
        "--mesh, --rig and --labels must be given the same number of times"
    );
    let mut paths: Vec<&Path> = Vec::new();
    paths.extend(a.mesh.iter().map(PathBuf::as_path));
    paths.extend(a.rig.iter().map(PathBuf::as_path));
    paths.extend(a.labels.iter().map(PathBuf::as_path));
    paths.extend(a.clip.iter().map(PathBuf::as_path));
    paths.extend(a.init.as_deref());
    let inputs = require_inputs(&paths)?;
    let config = TrainConfig {
        seed: a.seed,
        learning_rate: a.lr,
        batch_size: a.batch_size,
        steps: a.steps,
        full_mesh_fraction: a.full_mesh_fraction,
        clip_fraction: a.clip_fraction,
        voxel_size: a.voxel_size,
        mode: match a.mode {
            ModeArg::Oneshot => TrainMode::Oneshot,
            ModeArg::MultiviewTrain => TrainMode::MultiviewTrain,
        },
        optimizer: match a.optimizer {
            OptimizerArg::Sgd => OptimizerKind::Sgd { momentum: a.momentum },
            OptimizerArg::Adam => OptimizerKind::adam(),
        },
        hard_labels: a.hard_labels,
        pose_pool: a.pose_pool,
        depth_noise: a.depth_noise,
        checkpoint_every: a.checkpoint_every,
        ..Default::default()
    };
    config.validate()?;
    let loss_csv = with_suffix(&a.out, ".loss.csv");
    if dry_run {
        return Ok(Outcome::planned(inputs, vec![a.out.clone(), loss_csv], Some(a.seed)));
    }
    let mut templates = Vec::with_capacity(a.mesh.len());
    for ((m, r), l) in a.mesh.iter().zip(&a.rig).zip(&a.labels) {
        let mesh = read_mesh(m)?;
        let skeleton = load_rig_for_mesh(r, &mesh)?;
        let labels = read_labels(l)?;
        let mut t = TrainingTemplate::new(mesh, skeleton, labels)?;
        for c in &a.clip {
            t.clip_poses.extend(load_motion_clip(c)?.poses(&t.skeleton)?);
        }
        templates.push(t);
    }
    let markers = templates[0].labels.marker_count();
    ensure!(
        templates.iter().all(|t| t.labels.marker_count() == markers),
        "all templates must share the marker count"
    );
    let mut model = match &a.init {
        Some(p) => load_checkpoint(p)?,
        None => ClassifierModel::new(
            ModelConfig {
                markers,
                channels: a.channels.clone(),
                blocks: a.blocks,
                kernel: 3,
                voxel_size: a.voxel_size,
                normals: a.normals,
            },
            a.seed,
        )?,
    };
    ensure!(
        model.marker_count() == markers,
        "checkpoint predicts {} markers, labels have {markers}",
        model.marker_count()
    );
    ensure_parent(&a.out)?;
    let ckpt_dir = a
        .out
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let curve = train(
        &mut model,
        &templates,
        &config,
        (a.checkpoint_every > 0).then_some(ckpt_dir),
    )?;
    save_checkpoint(&model, &a.out)?;
    curve.write_csv(&loss_csv)?;
    let tail = curve.losses.len().min(50);
    let final_loss = curve.losses[curve.losses.len() - tail..].iter().sum::<f64>() / tail.max(1) as f64;
    Ok(Outcome {
        inputs,
        outputs: vec![a.out.clone(), loss_csv],
        seed: Some(a.seed),
        summary: json!({
            "steps": curve.losses.len(),
            "parameters": model.parameter_count(),
            "first_loss": curve.losses.first(),
            "final_loss_mean50": final_loss,
        }),
    })
}

// ---------------------------------------------------------------- infer

#[derive(Debug, Subcommand)]
pub enum InferCommand {
    /// One forward pass over a mesh, point cloud or depth frame.
    Oneshot(InferOneshotArgs),
    /// Render the mesh from many views, predict per view, and merge onto the vertices.
    Multiview(InferMultiviewArgs),
}

#[derive(Debug, Args)]
pub struct InferOneshotArgs {
    /// Model checkpoint.
    #[arg(long)]
    pub model: PathBuf,
    /// Mesh input (predictions per vertex).
    #[arg(long, group = "input")]
    pub mesh: Option<PathBuf>,
    /// Point cloud input (.ply).
    #[arg(long, group = "input")]
    pub cloud: Option<PathBuf>,
    /// Depth PNG with its camera sidecar.
    #[arg(long, group = "input")]
    pub depth: Option<PathBuf>,
    /// Output label file; confidences go to <out>.confidence.csv.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InferMultiviewArgs {
    /// Model checkpoint.
    #[arg(long)]
    pub model: PathBuf,
    /// Mesh whose vertices receive the merged predictions.
    #[arg(long)]
    pub mesh: PathBuf,
    /// Number of rendered views.
    #[arg(long, default_value_t = 72)]
    pub views: usize,
    /// Nearest observed points merged per vertex.
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, value_enum, default_value_t = StrategyArg::Ring)]
    pub strategy: StrategyArg,
    /// Camera distance in meters; fitted to the view when omitted.
    #[arg(long)]
    pub distance: Option<f64>,
    /// Search radius for observed points in meters (default three voxels).
    #[arg(long)]
    pub radius: Option<f64>,
    #[command(flatten)]
    pub camera: CameraArgs,
    /// Output label file; confidences go to <out>.confidence.csv.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn infer(cmd: &InferCommand, dry_run: bool) -> Result<Outcome> {
    match cmd {
        InferCommand::Oneshot(a) => {
            let mut paths: Vec<&Path> = vec![&a.model];
            paths.extend(a.mesh.as_deref());
            paths.extend(a.cloud.as_deref());
            paths.extend(a.depth.as_deref());
            let inputs = require_inputs(&paths)?;
            ensure!(
                paths.len() == 2,
                "exactly one of --mesh, --cloud or --depth is required"
            );
            let outputs = vec![a.out.clone(), with_suffix(&a.out, ".confidence.csv")];
            if dry_run {
                return Ok(Outcome::planned(inputs, outputs, None));
            }
            let model = load_checkpoint(&a.model)?;
            let result = if let Some(m) = &a.mesh {
                infer_oneshot(&model, InferenceInput::Mesh(&read_mesh(m)?))?
            } else if let Some(c) = &a.cloud {
                let points = read_point_ply(c)?;
                let n = points.len();
                let cloud = LabeledPointCloud::new(points, None, (0..n).map(PointSource::Vertex).collect())?;
                infer_oneshot(&model, InferenceInput::Cloud(&cloud))?
            } else {
                let frame = read_depth_png(a.depth.as_ref().expect("one input is present"))?;
                infer_oneshot(&model, InferenceInput::Frame(&frame))?
            };
            ensure_parent(&a.out)?;
            write_prediction(&result, &a.out)?;
            Ok(Outcome {
                inputs,
                outputs,
                seed: None,
                summary: json!({ "points": result.labels.vertex_count(), "elapsed_ms": result.elapsed_ms }),
            })
        }
        InferCommand::Multiview(a) => {
            let inputs = require_inputs(&[&a.model, &a.mesh])?;
            let opts = MultiviewOptions {
                views: a.views,
                k: a.k,
                strategy: a.strategy.into(),
                intrinsics: a.camera.intrinsics()?,
                distance: a.distance,
                radius: a.radius,
                ..Default::default()
            };
            ensure!(a.views > 0 && a.k > 0, "--views and --k must be at least 1");
            let outputs = vec![a.out.clone(), with_suffix(&a.out, ".confidence.csv")];
            if dry_run {
                return Ok(Outcome::planned(inputs, outputs, None));
            }
            let model = load_checkpoint(&a.model)?;
            let mesh = read_mesh(&a.mesh)?;
            let result = infer_multiview(&model, &mesh, &opts)?;
            let unobserved = result.confidence.iter().filter(|&&c| c == 0.0).count();
            ensure_parent(&a.out)?;
            write_prediction(&result, &a.out)?;
            Ok(Outcome {
                inputs,
                outputs,
                seed: None,
                summary: json!({
                    "vertices": result.labels.vertex_count(),
                    "unobserved": unobserved,
                    "elapsed_ms": result.elapsed_ms,
                }),
            })
        }
    }
}

// ---------------------------------------------------------------- match

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MetricArg {
    L2,
    Cosine,
}

#[derive(Debug, Args)]
pub struct MatchArgs {
    /// Source labels (typically a prediction).
    #[arg(long)]
    pub source: PathBuf,
    /// Target labels (typically the template annotation).
    #[arg(long)]
    pub target: PathBuf,
    #[arg(long, value_enum, default_value_t = MetricArg::L2)]
    pub metric: MetricArg,
    /// Output correspondence map.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn match_cmd(a: &MatchArgs, dry_run: bool) -> Result<Outcome> {
    let inputs = require_inputs(&[&a.source, &a.target])?;
    if dry_run {
        return Ok(Outcome::planned(inputs, vec![a.out.clone()], None));
    }
    let source = read_labels(&a.source)?;
    let target = read_labels(&a.target)?;
    let metric = match a.metric {
        MetricArg::L2 => MatchMetric::L2,
        MetricArg::Cosine => MatchMetric::Cosine,
    };
    let map = match_labels(&source, &target, metric)?;
    ensure_parent(&a.out)?;
    write_correspondence_map(&map, &a.out)?;
    Ok(Outcome {
        inputs,
        outputs: vec![a.out.clone()],
        seed: None,
        summary: json!({ "sources": map.len(), "targets": map.target_count }),
    })
}

// ---------------------------------------------------------------- eval

#[derive(Debug, Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum NormArg {
    None,
    SqrtArea,
    Diameter,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Correspondence map; repeat for several pairs.
    #[arg(long, required = true, action = clap::ArgAction::Append)]
    pub pred: Vec<PathBuf>,
    /// Ground-truth "source target" index pairs; one file for all maps or one per map.
    #[arg(long, required = true, action = clap::ArgAction::Append)]
    pub gt: Vec<PathBuf>,
    /// Target mesh on which geodesic errors are measured.
    #[arg(long)]
    pub mesh: PathBuf,
    /// Error normalization.
    #[arg(long, value_enum, default_value_t = NormArg::SqrtArea)]
    pub norm: NormArg,
    /// Output directory for report.csv and cumulative_error.svg.
    #[arg(long)]
    pub out: PathBuf,
}

fn gt_vector(path: &Path, sources: usize, targets: usize) -> Result<Vec<usize>> {
    let mut gt = vec![usize::MAX; sources];
    for (s, t) in read_index_pairs(path)? {
        ensure!(
            s < sources && t < targets,
            "{}: pair ({s}, {t}) out of range",
            path.display()
        );
        gt[s] = t;
    }
    if let Some(missing) = gt.iter().position(|&t| t == usize::MAX) {
        bail!("{}: no ground truth for source point {missing}", path.display());
    }
    Ok(gt)
}

pub fn eval(a: &EvalArgs, dry_run: bool) -> Result<Outcome> {
    ensure!(
        a.gt.len() == 1 || a.gt.len() == a.pred.len(),
        "give one --gt for all maps or one per --pred"
    );
    let mut paths: Vec<&Path> = vec![&a.mesh];
    paths.extend(a.pred.iter().map(PathBuf::as_path));
    paths.extend(a.gt.iter().map(PathBuf::as_path));
    let inputs = require_inputs(&paths)?;
    if dry_run {
        return Ok(Outcome::planned(inputs, vec![a.out.clone()], None));
    }
    let mesh = read_mesh(&a.mesh)?;
    let norm = match a.norm {
        NormArg::None => Normalization::None,
        NormArg::SqrtArea => Normalization::SqrtArea,
        NormArg::Diameter => Normalization::Diameter,
    };
    let mut pairs = Vec::with_capacity(a.pred.len());
    for (i, p) in a.pred.iter().enumerate() {
        let map = read_correspondence_map(p)?;
        ensure!(
            map.target_count == mesh.vertex_count(),
            "{} maps onto {} points, target mesh has {}",
            p.display(),
            map.target_count,
            mesh.vertex_count()
        );
        let gt = gt_vector(&a.gt[i.min(a.gt.len() - 1)], map.len(), map.target_count)?;
        let name = p
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| format!("pair{i}"));
        pairs.push(eval_geodesic_error(&name, &map, &gt, &mesh, norm)?);
    }
    let report = ErrorReport::new(pairs)?;
    std::fs::create_dir_all(&a.out)?;
    emit_report(&report, &a.out)?;
    Ok(Outcome {
        inputs,
        outputs: vec![a.out.clone()],
        seed: None,
        summary: json!({
            "pairs": report.pairs.len(),
            "ae": report.ae,
            "we": report.we,
            "normalized_mean_percent": report.normalized_mean_percent,
        }),
    })
}

// ---------------------------------------------------------------- bench

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Model checkpoint; a freshly initialized default model when omitted.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Mesh to render the benchmark frame from; the built-in humanoid when omitted.
    #[arg(long)]
    pub mesh: Option<PathBuf>,
    /// Timed runs.
    #[arg(long, default_value_t = 50)]
    pub runs: usize,
    /// Untimed warm-up runs.
    #[arg(long, default_value_t = 5)]
    pub warmup: usize,
    /// Marker count of the fresh model when --model is omitted.
    #[arg(long, default_value_t = 26)]
    pub markers: usize,
    /// Voxel size of the fresh model when --model is omitted.
    #[arg(long, default_value_t = 0.02)]
    pub voxel_size: f64,
    /// Initialization seed of the fresh model.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub camera: CameraArgs,
    /// Output JSON report.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn bench(a: &BenchArgs, dry_run: bool) -> Result<Outcome> {
    let mut paths: Vec<&Path> = Vec::new();
    paths.extend(a.model.as_deref());
    paths.extend(a.mesh.as_deref());
    let inputs = require_inputs(&paths)?;
    let k = a.camera.intrinsics()?;
    ensure!(a.runs > 0, "--runs must be at least 1");
    if dry_run {
        return Ok(Outcome::planned(inputs, vec![a.out.clone()], Some(a.seed)));
    }
    let model = match &a.model {
        Some(p) => load_checkpoint(p)?,
        None => ClassifierModel::new(
            ModelConfig {
                voxel_size: a.voxel_size,
                ..ModelConfig::new(a.markers)
            },
            a.seed,
        )?,
    };
    let mesh = match &a.mesh {
        Some(p) => read_mesh(p)?,
        None => {
            humanoid(&HumanoidOptions {
                weights: false,
                ..Default::default()
            })?
            .0
        }
    };
    let center = mesh.centroid();
    let cam = sample_viewpoints(1, ViewStrategy::Ring, fit_view_distance(&mesh, &center, &k), &center, k)?[0];
    let frame = render_depth(&mesh, &cam);
    let report = bench_oneshot(&model, &frame, a.runs, a.warmup)?;
    ensure_parent(&a.out)?;
    let text = serde_json::to_string_pretty(&report)?;
    std::fs::write(&a.out, text + "\n").with_context(|| format!("writing {}", a.out.display()))?;
    println!(
        "oneshot latency over {} runs ({} points, {} voxels): p50 {:.2} ms, p90 {:.2} ms, p99 {:.2} ms",
        report.runs, report.points, report.voxels, report.p50_ms, report.p90_ms, report.p99_ms
    );
    Ok(Outcome {
        inputs,
        outputs: vec![a.out.clone()],
        seed: Some(a.seed),
        summary: serde_json::to_value(&report)?,
    })
}
