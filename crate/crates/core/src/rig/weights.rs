use nalgebra::Point3;
use rayon::prelude::*;

use super::{Skeleton, SkinWeights};
use crate::error::Result;
use crate::mesh::TriangleMesh;
use crate::softlabel::{solve_all, HeatOptions, HeatSystem};

/// Euclidean distance from `p` to the segment `[a, b]`.
pub fn point_segment_distance(p: &Point3<f64>, a: &Point3<f64>, b: &Point3<f64>) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let t = if len2 > 0.0 {
        ((p - a).dot(&ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p - (a + ab * t)).norm()
}

/// Heat-diffusion skinning weights: bones act as heat sources, each vertex
/// attached to its nearest bone(s) by Euclidean segment distance.
pub fn compute_skinning_weights(mesh: &TriangleMesh, skeleton: &Skeleton, opts: &HeatOptions) -> Result<SkinWeights> {
    let nb = skeleton.bones().len();
    let distances: Vec<Vec<f64>> = (0..nb)
        .into_par_iter()
        .map(|b| {
            let (a, c) = skeleton.bone_segment(b);
            mesh.vertices()
                .iter()
                .map(|p| point_segment_distance(p, &a, &c))
                .collect()
        })
        .collect();
    let system = HeatSystem::from_distances(&distances, opts)?;
    let fields = solve_all(mesh, &system, opts)?;
    let n = mesh.vertex_count();
    let mut values = Vec::with_capacity(n * nb);
    for d in 0..n {
        // round-off may leave entries a hair below zero
        let row: Vec<f64> = fields.iter().map(|w| w[d].max(0.0)).collect();
        let sum: f64 = row.iter().sum();
        values.extend(row.into_iter().map(|x| x / sum));
    }
    SkinWeights::new(nb, values)
}
