//! Oneshot and multiview prediction of dense soft labels.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::Point3;
use serde::Serialize;

use crate::classifier::{softmax_in_place, voxelize, ClassifierModel};
use crate::error::{Error, Result};
use crate::mesh::TriangleMesh;
use crate::render::{
    backproject, fit_view_distance, render_depth, sample_viewpoints, DepthFrame, Intrinsics, LabeledPointCloud,
    ViewStrategy,
};
use crate::softlabel::{write_labels, SoftLabelField};
use crate::stats;

#[derive(Debug, Clone, Copy)]
pub enum InferenceInput<'a> {
    /// Uses the mesh's vertex set.
    Mesh(&'a TriangleMesh),
    Cloud(&'a LabeledPointCloud),
    /// Back-projected to world space through the frame's camera.
    Frame(&'a DepthFrame),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionResult {
    /// Softmax-normalized labels, `S × N`.
    pub labels: SoftLabelField,
    /// Largest label entry per point; 0 for points that received no prediction.
    pub confidence: Vec<f32>,
    pub elapsed_ms: f64,
}

impl PredictionResult {
    fn from_columns(s: usize, n: usize, values: Vec<f32>, elapsed_ms: f64) -> Result<Self> {
        let labels = SoftLabelField::new(s, n, values)?;
        let confidence = (0..n)
            .map(|j| (0..s).map(|m| labels.get(m, j)).fold(0.0f32, f32::max))
            .collect();
        Ok(Self {
            labels,
            confidence,
            elapsed_ms,
        })
    }
}

fn softmax_rows(logits: &mut [f64], s: usize) {
    for row in logits.chunks_exact_mut(s) {
        softmax_in_place(row);
    }
}

/// Per-point probabilities for a cloud: one forward pass, softmax per voxel,
/// broadcast to member points.
fn predict_cloud(model: &ClassifierModel, cloud: &LabeledPointCloud) -> Result<Vec<f32>> {
    if cloud.is_empty() {
        return Err(Error::InvalidInput(
            "nothing to predict: the input has no points".into(),
        ));
    }
    let grid = voxelize(cloud, model.voxel_size())?;
    let s = model.marker_count();
    let mut probs = model.forward_voxels(&grid)?;
    softmax_rows(&mut probs, s);
    let n = grid.point_count();
    let mut values = vec![0f32; s * n];
    for (j, &v) in grid.point_voxels().iter().enumerate() {
        let row = &probs[v as usize * s..(v as usize + 1) * s];
        for (m, &p) in row.iter().enumerate() {
            values[m * n + j] = p as f32;
        }
    }
    Ok(values)
}

/// Single forward pass over the whole input.
pub fn infer_oneshot(model: &ClassifierModel, input: InferenceInput<'_>) -> Result<PredictionResult> {
    let start = Instant::now();
    let owned;
    let cloud = match input {
        InferenceInput::Mesh(m) => {
            owned = LabeledPointCloud::from_mesh(m, None)?;
            &owned
        }
        InferenceInput::Cloud(c) => c,
        InferenceInput::Frame(f) => {
            owned = backproject(f, true);
            &owned
        }
    };
    let values = predict_cloud(model, cloud)?;
    let elapsed = start.elapsed().as_secs_f64() * 1e3;
    PredictionResult::from_columns(model.marker_count(), cloud.len(), values, elapsed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiviewOptions {
    pub views: usize,
    /// Neighbors averaged per vertex.
    pub k: usize,
    pub strategy: ViewStrategy,
    pub intrinsics: Intrinsics,
    /// Camera distance from the mesh center; by default the distance at
    /// which the bounding sphere fills the narrower field of view with 10%
    /// margin.
    pub distance: Option<f64>,
    /// Neighbor search radius; 3 voxels by default.
    pub radius: Option<f64>,
    /// Lower bound on distances in the inverse-distance weights.
    pub distance_floor: f64,
}

impl Default for MultiviewOptions {
    fn default() -> Self {
        Self {
            views: 72,
            k: 5,
            strategy: ViewStrategy::Ring,
            intrinsics: Intrinsics::default(),
            distance: None,
            radius: None,
            distance_floor: 1e-6,
        }
    }
}

/// Merged world-space predictions from all views, deduplicated by exact
/// position so that repeated views do not change the result.
struct MergedPoints {
    points: Vec<Point3<f64>>,
    labels: Vec<Vec<f64>>,
}

fn merge_views(parts: Vec<(LabeledPointCloud, Vec<f32>)>, s: usize) -> MergedPoints {
    let mut index: HashMap<[u64; 3], usize> = HashMap::new();
    let mut points = Vec::new();
    let mut sums: Vec<Vec<f64>> = Vec::new();
    let mut counts: Vec<f64> = Vec::new();
    for (cloud, values) in parts {
        let n = cloud.len();
        for (j, p) in cloud.points.iter().enumerate() {
            let key = [p.x.to_bits(), p.y.to_bits(), p.z.to_bits()];
            let i = *index.entry(key).or_insert_with(|| {
                points.push(*p);
                sums.push(vec![0.0; s]);
                counts.push(0.0);
                points.len() - 1
            });
            for (m, acc) in sums[i].iter_mut().enumerate() {
                *acc += f64::from(values[m * n + j]);
            }
            counts[i] += 1.0;
        }
    }
    for (row, c) in sums.iter_mut().zip(&counts) {
        row.iter_mut().for_each(|x| *x /= c);
    }
    MergedPoints { points, labels: sums }
}

/// Uniform hash grid for fixed-radius k-nearest-neighbor queries.
struct HashGrid {
    cell: f64,
    cells: HashMap<[i64; 3], Vec<usize>>,
}

impl HashGrid {
    fn new(points: &[Point3<f64>], cell: f64) -> Self {
        let mut cells: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::key(p, cell)).or_default().push(i);
        }
        Self { cell, cells }
    }

    fn key(p: &Point3<f64>, cell: f64) -> [i64; 3] {
        [0, 1, 2].map(|k| (p[k] / cell).floor() as i64)
    }

    /// Up to `k` nearest points within `radius` (≤ cell), nearest first; ties
    /// are ordered by position so the result does not depend on input order.
    fn knn(&self, points: &[Point3<f64>], q: &Point3<f64>, k: usize, radius: f64) -> Vec<(f64, usize)> {
        let c = Self::key(q, self.cell);
        let mut found = Vec::new();
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(ids) = self.cells.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) {
                        for &i in ids {
                            let d = (points[i] - q).norm();
                            if d <= radius {
                                found.push((d, i));
                            }
                        }
                    }
                }
            }
        }
        found.sort_by(|a, b| {
            a.0.total_cmp(&b.0).then_with(|| {
                let (pa, pb) = (&points[a.1], &points[b.1]);
                pa.x.total_cmp(&pb.x)
                    .then(pa.y.total_cmp(&pb.y))
                    .then(pa.z.total_cmp(&pb.z))
            })
        });
        found.truncate(k);
        found
    }
}

/// Renders `views` depth frames of `mesh`, predicts each, and gives every
/// vertex the inverse-distance-weighted mean of its `k` nearest predicted
/// points within the search radius (weights normalized to sum to 1). Vertices with no neighbor get a uniform
/// label and zero confidence.
pub fn infer_multiview(
    model: &ClassifierModel,
    mesh: &TriangleMesh,
    opts: &MultiviewOptions,
) -> Result<PredictionResult> {
    if opts.k == 0 {
        return Err(Error::InvalidInput("k must be at least 1".into()));
    }
    if mesh.vertex_count() == 0 {
        return Err(Error::EmptyMesh("nothing to predict".into()));
    }
    let start = Instant::now();
    let s = model.marker_count();
    let center = mesh.centroid();
    let distance = opts
        .distance
        .unwrap_or_else(|| fit_view_distance(mesh, &center, &opts.intrinsics));
    let cameras = sample_viewpoints(opts.views, opts.strategy, distance, &center, opts.intrinsics)?;
    let mut parts = Vec::with_capacity(cameras.len());
    for cam in &cameras {
        let frame = render_depth(mesh, cam);
        if frame.valid_pixels() == 0 {
            continue;
        }
        let cloud = backproject(&frame, true);
        let values = predict_cloud(model, &cloud)?;
        parts.push((cloud, values));
    }
    if parts.is_empty() {
        return Err(Error::Invisible);
    }
    let merged = merge_views(parts, s);
    let radius = opts.radius.unwrap_or(3.0 * model.voxel_size());
    let grid = HashGrid::new(&merged.points, radius);
    let n = mesh.vertex_count();
    let mut values = vec![0f32; s * n];
    let mut observed = vec![true; n];
    for (v, p) in mesh.vertices().iter().enumerate() {
        let nn = grid.knn(&merged.points, p, opts.k, radius);
        let mut acc = vec![0.0; s];
        if nn.is_empty() {
            observed[v] = false;
            acc.iter_mut().for_each(|a| *a = 1.0 / s as f64);
        } else {
            // normalized weights make the result a convex combination of
            // already normalized label vectors
            let w: Vec<f64> = nn.iter().map(|&(d, _)| 1.0 / d.max(opts.distance_floor)).collect();
            let wsum: f64 = w.iter().sum();
            for (&(_, i), wi) in nn.iter().zip(&w) {
                let wi = wi / wsum;
                acc.iter_mut().zip(&merged.labels[i]).for_each(|(a, l)| *a += wi * l);
            }
        }
        for (m, a) in acc.into_iter().enumerate() {
            values[m * n + v] = a as f32;
        }
    }
    let elapsed = start.elapsed().as_secs_f64() * 1e3;
    let mut result = PredictionResult::from_columns(s, n, values, elapsed)?;
    for (c, seen) in result.confidence.iter_mut().zip(observed) {
        if !seen {
            *c = 0.0;
        }
    }
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub runs: usize,
    pub points: usize,
    pub voxels: usize,
    pub p50_ms: f64,
    pub p90_ms: f64,
    pub p99_ms: f64,
    pub mean_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
}

/// Times `runs` oneshot predictions of `frame` after `warmup` untimed runs.
pub fn bench_oneshot(model: &ClassifierModel, frame: &DepthFrame, runs: usize, warmup: usize) -> Result<BenchReport> {
    if runs == 0 {
        return Err(Error::InvalidInput("bench needs at least one run".into()));
    }
    let cloud = backproject(frame, true);
    let voxels = voxelize(&cloud, model.voxel_size())?.len();
    for _ in 0..warmup {
        infer_oneshot(model, InferenceInput::Frame(frame))?;
    }
    let times = (0..runs)
        .map(|_| infer_oneshot(model, InferenceInput::Frame(frame)).map(|r| r.elapsed_ms))
        .collect::<Result<Vec<_>>>()?;
    Ok(BenchReport {
        runs,
        points: cloud.len(),
        voxels,
        p50_ms: stats::percentile(&times, 50.0),
        p90_ms: stats::percentile(&times, 90.0),
        p99_ms: stats::percentile(&times, 99.0),
        mean_ms: stats::mean(&times),
        min_ms: times.iter().copied().fold(f64::INFINITY, f64::min),
        max_ms: times.iter().copied().fold(0.0, f64::max),
    })
}

/// Writes the labels to `path` (VMRK) and per-point confidence to
/// `<path>.confidence.csv`; returns the CSV path.
pub fn write_prediction(result: &PredictionResult, path: impl AsRef<Path>) -> Result<PathBuf> {
    let path = path.as_ref();
    write_labels(&result.labels, path)?;
    let mut csv = path.as_os_str().to_owned();
    csv.push(".confidence.csv");
    let csv = PathBuf::from(csv);
    let mut text = String::from("point,confidence\n");
    for (i, c) in result.confidence.iter().enumerate() {
        text.push_str(&format!("{i},{c}\n"));
    }
    let mut f = std::fs::File::create(&csv).map_err(|e| Error::io(&csv, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(&csv, e))?;
    Ok(csv)
}
