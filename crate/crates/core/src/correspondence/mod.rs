//! Dense correspondences from label fields, geodesic error evaluation and
//! attribute transfer.

mod io;
mod report;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{geodesic_between, geodesic_diameter, surface_area, DiameterOptions, TriangleMesh};
use crate::softlabel::SoftLabelField;

pub use io::{read_correspondence_map, read_index_pairs, write_correspondence_map, write_index_pairs};
pub use report::{emit_report, parse_report_csv, ReportSummary};

/// Above this many target points matching uses pivot-based pruning.
pub const EXHAUSTIVE_LIMIT: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchMetric {
    #[default]
    L2,
    /// `1 − cos` between label vectors.
    Cosine,
}

/// Target index and label-space distance for every source point.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceMap {
    pub targets: Vec<usize>,
    pub scores: Vec<f64>,
    pub target_count: usize,
}

impl CorrespondenceMap {
    pub fn new(targets: Vec<usize>, scores: Vec<f64>, target_count: usize) -> Result<Self> {
        if targets.len() != scores.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} targets but {} scores",
                targets.len(),
                scores.len()
            )));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= target_count) {
            return Err(Error::OutOfRange {
                index: t,
                len: target_count,
            });
        }
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidInput(format!("score {i} is not finite")));
        }
        Ok(Self {
            targets,
            scores,
            target_count,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            targets: (0..n).collect(),
            scores: vec![0.0; n],
            target_count: n,
        }
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

/// Column vectors in f64, unit-normalized for the cosine metric.
fn columns(field: &SoftLabelField, metric: MatchMetric) -> Vec<Vec<f64>> {
    (0..field.vertex_count())
        .map(|j| {
            let mut c: Vec<f64> = field.column(j).into_iter().map(f64::from).collect();
            if metric == MatchMetric::Cosine {
                let n = c.iter().map(|x| x * x).sum::<f64>().sqrt();
                if n > 0.0 {
                    c.iter_mut().for_each(|x| *x /= n);
                }
            }
            c
        })
        .collect()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn nearest_exhaustive(q: &[f64], targets: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, t) in targets.iter().enumerate() {
        let d = dist(q, t);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// Exact nearest-neighbor search with triangle-inequality lower bounds from
/// a few farthest-first pivots.
struct PivotIndex {
    pivots: Vec<usize>,
    /// `targets × pivots` distances.
    table: Vec<f64>,
}

impl PivotIndex {
    fn new(targets: &[Vec<f64>], count: usize) -> Self {
        let mut pivots = vec![0];
        let mut nearest: Vec<f64> = targets.iter().map(|t| dist(t, &targets[0])).collect();
        while pivots.len() < count.min(targets.len()) {
            let next = (0..targets.len())
                .max_by(|&a, &b| nearest[a].total_cmp(&nearest[b]).then(b.cmp(&a)))
                .unwrap();
            pivots.push(next);
            for (i, t) in targets.iter().enumerate() {
                nearest[i] = nearest[i].min(dist(t, &targets[next]));
            }
        }
        let table = targets
            .iter()
            .flat_map(|t| pivots.iter().map(|&p| dist(t, &targets[p])).collect::<Vec<_>>())
            .collect();
        Self { pivots, table }
    }

    fn nearest(&self, q: &[f64], targets: &[Vec<f64>]) -> (usize, f64) {
        let k = self.pivots.len();
        let qp: Vec<f64> = self.pivots.iter().map(|&p| dist(q, &targets[p])).collect();
        let mut order: Vec<(f64, usize)> = (0..targets.len())
            .map(|i| {
                let row = &self.table[i * k..(i + 1) * k];
                let lb = row.iter().zip(&qp).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                (lb, i)
            })
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut best = (usize::MAX, f64::INFINITY);
        for (lb, i) in order {
            if lb > best.1 {
                break;
            }
            let d = dist(q, &targets[i]);
            if d < best.1 || (d == best.1 && i < best.0) {
                best = (i, d);
            }
        }
        best
    }
}

/// Maps every source column to the target column nearest in label space;
/// ties go to the lowest target index.
pub fn match_labels(
    source: &SoftLabelField,
    target: &SoftLabelField,
    metric: MatchMetric,
) -> Result<CorrespondenceMap> {
    if source.marker_count() != target.marker_count() {
        return Err(Error::ShapeMismatch(format!(
            "source has {} markers, target has {}",
            source.marker_count(),
            target.marker_count()
        )));
    }
    if target.vertex_count() == 0 {
        return Err(Error::InvalidInput("target label field is empty".into()));
    }
    let src = columns(source, metric);
    let tgt = columns(target, metric);
    let index = (tgt.len() > EXHAUSTIVE_LIMIT).then(|| PivotIndex::new(&tgt, 16));
    let found: Vec<(usize, f64)> = src
        .par_iter()
        .map(|q| match &index {
            Some(ix) => ix.nearest(q, &tgt),
            None => nearest_exhaustive(q, &tgt),
        })
        .collect();
    let scores = found
        .iter()
        .map(|&(_, d)| match metric {
            MatchMetric::L2 => d,
            // |a − b|² = 2 − 2 cos for unit vectors
            MatchMetric::Cosine => 0.5 * d * d,
        })
        .collect();
    CorrespondenceMap::new(found.into_iter().map(|(i, _)| i).collect(), scores, tgt.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    None,
    #[default]
    SqrtArea,
    Diameter,
}

/// Errors of one evaluated pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairEvaluation {
    pub name: String,
    /// Geodesic error per source point, in mesh units.
    pub errors: Vec<f64>,
    pub mean: f64,
    /// Divisor used for normalized errors (1 without normalization).
    pub normalizer: f64,
    /// Points whose prediction lies in another component than the ground truth;
    /// their error is the geodesic diameter.
    pub disconnected: usize,
}

impl PairEvaluation {
    pub fn normalized_mean(&self) -> f64 {
        self.mean / self.normalizer
    }
}

/// Geodesic distance on `target` between predicted and ground-truth points.
pub fn eval_geodesic_error(
    name: &str,
    map: &CorrespondenceMap,
    gt: &[usize],
    target: &TriangleMesh,
    normalization: Normalization,
) -> Result<PairEvaluation> {
    if gt.len() != map.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} ground-truth entries for {} mapped points",
            gt.len(),
            map.len()
        )));
    }
    if map.is_empty() {
        return Err(Error::InvalidInput("nothing to evaluate".into()));
    }
    let n = target.vertex_count();
    for &t in gt.iter().chain(&map.targets) {
        if t >= n {
            return Err(Error::OutOfRange { index: t, len: n });
        }
    }
    let raw: Vec<f64> = map
        .targets
        .par_iter()
        .zip(gt)
        .map(|(&p, &g)| geodesic_between(target, g, p))
        .collect();
    let disconnected = raw.iter().filter(|d| d.is_infinite()).count();
    let diameter = || geodesic_diameter(target, DiameterOptions::default()).diameter;
    let fallback = if disconnected > 0 { diameter() } else { 0.0 };
    if disconnected > 0 {
        log::warn!("{name}: {disconnected} predictions fall in another component");
    }
    let errors: Vec<f64> = raw
        .into_iter()
        .map(|d| if d.is_finite() { d } else { fallback })
        .collect();
    let normalizer = match normalization {
        Normalization::None => 1.0,
        Normalization::SqrtArea => surface_area(target).sqrt(),
        Normalization::Diameter => {
            if disconnected > 0 {
                fallback
            } else {
                diameter()
            }
        }
    };
    if !(normalizer > 0.0) {
        return Err(Error::InvalidInput("target mesh has no extent to normalize by".into()));
    }
    let mean = errors.iter().sum::<f64>() / errors.len() as f64;
    Ok(PairEvaluation {
        name: name.to_string(),
        errors,
        mean,
        normalizer,
        disconnected,
    })
}

/// Aggregate over evaluated pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    pub pairs: Vec<PairEvaluation>,
    /// Mean of the per-pair mean errors.
    pub ae: f64,
    /// Largest per-pair mean error.
    pub we: f64,
    /// Mean of the normalized per-pair means, in percent.
    pub normalized_mean_percent: f64,
    /// `(normalized error, fraction of points with error ≤ it)`, sorted.
    pub curve: Vec<(f64, f64)>,
}

impl ErrorReport {
    pub fn new(pairs: Vec<PairEvaluation>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::InvalidInput("report needs at least one pair".into()));
        }
        let k = pairs.len() as f64;
        let ae = pairs.iter().map(|p| p.mean).sum::<f64>() / k;
        let we = pairs.iter().map(|p| p.mean).fold(0.0, f64::max);
        let normalized_mean_percent = 100.0 * pairs.iter().map(PairEvaluation::normalized_mean).sum::<f64>() / k;
        let mut all: Vec<f64> = pairs
            .iter()
            .flat_map(|p| p.errors.iter().map(move |e| e / p.normalizer))
            .collect();
        all.sort_by(f64::total_cmp);
        let total = all.len() as f64;
        let mut curve: Vec<(f64, f64)> = Vec::new();
        for (i, &e) in all.iter().enumerate() {
            let frac = (i + 1) as f64 / total;
            match curve.last_mut() {
                Some(last) if last.0 == e => last.1 = frac,
                _ => curve.push((e, frac)),
            }
        }
        Ok(Self {
            pairs,
            ae,
            we,
            normalized_mean_percent,
            curve,
        })
    }
}

/// Every mapped point receives the attribute of its matched target point:
/// `out[i] = attributes[map.targets[i]]`.
pub fn transfer_attributes<T: Clone>(map: &CorrespondenceMap, attributes: &[T]) -> Result<Vec<T>> {
    if attributes.len() != map.target_count {
        return Err(Error::ShapeMismatch(format!(
            "{} attributes for {} target points",
            attributes.len(),
            map.target_count
        )));
    }
    Ok(map.targets.iter().map(|&t| attributes[t].clone()).collect())
}
