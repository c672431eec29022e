use nalgebra::{Point3, Vector3};

use super::{Pose, Skeleton};
use crate::error::{Error, Result};
use crate::mesh::TriangleMesh;

/// Linear blend skinning: `v′ = Σ_b w(v, b) · T_b(v)`.
///
/// Connectivity and vertex order are preserved, so per-vertex labels of the
/// rest mesh remain valid on the result.
pub fn lbs_skin(mesh: &TriangleMesh, skeleton: &Skeleton, pose: &Pose) -> Result<TriangleMesh> {
    let weights = skeleton.weights().ok_or(Error::MissingWeights)?;
    if weights.vertex_count() != mesh.vertex_count() {
        return Err(Error::ShapeMismatch(format!(
            "skinning weights cover {} vertices, mesh has {}",
            weights.vertex_count(),
            mesh.vertex_count()
        )));
    }
    if pose.bones.len() != weights.bone_count() {
        return Err(Error::ShapeMismatch(format!(
            "pose has {} bone transforms, rig has {}",
            pose.bones.len(),
            weights.bone_count()
        )));
    }
    let verts = mesh
        .vertices()
        .iter()
        .zip(weights.rows())
        .map(|(p, row)| {
            let mut acc = Vector3::zeros();
            for (t, &w) in pose.bones.iter().zip(row) {
                if w != 0.0 {
                    acc += t.apply(p).coords * w;
                }
            }
            Point3::from(acc)
        })
        .collect();
    mesh.with_positions(verts)
}
