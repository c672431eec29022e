//! Skeleton rigs: file ingestion, sparse marker placement in per-bone
//! cylindrical frames, linear blend skinning and bounded pose sampling.

mod io;
mod lbs;
mod markers;
mod motion;
mod pose;
mod weights;

use std::collections::HashMap;

use nalgebra::{Point3, Vector3};

use crate::error::{Error, Result};

pub use io::{load_skeleton, parse_skeleton, save_skeleton, RigFile};
pub use lbs::lbs_skin;
pub use markers::{
    place_sparse_markers, read_marker_sidecar, write_marker_sidecar, MarkerProvenance, PlacementFailure,
    PlacementOptions, PlacementReport, SparseMarker, SparseMarkerSet,
};
pub use motion::{load_motion_clip, parse_motion_clip, random_pose_clip, write_motion_clip, Keyframe, MotionClip};
pub use pose::{sample_joint_angles, sample_random_pose, Pose, RigidTransform};
pub use weights::{compute_skinning_weights, point_segment_distance};

/// Per-axis rotation limits (radians) for a joint, applied as XYZ Euler angles.
pub type AngleLimits = [[f64; 2]; 3];

#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    pub name: String,
    /// Rest-pose position (meters).
    pub position: Point3<f64>,
    pub limits: Option<AngleLimits>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bone {
    pub name: String,
    pub parent: usize,
    pub child: usize,
    /// Reference direction for φ = 0 in the bone's cylindrical frame.
    pub polar_axis: Vector3<f64>,
    /// Number of sparse markers sampled on this bone.
    pub markers: usize,
    /// Number of z levels the marker grid is split into.
    pub rings: usize,
    /// Fractional range of bone length covered by the z levels.
    pub z_range: [f64; 2],
}

/// Per-vertex bone weights, row-major `D × B`.
#[derive(Debug, Clone, PartialEq)]
pub struct SkinWeights {
    bones: usize,
    values: Vec<f64>,
}

impl SkinWeights {
    pub const ROW_SUM_TOL: f64 = 1e-6;

    pub fn new(bones: usize, values: Vec<f64>) -> Result<Self> {
        if bones == 0 || !values.len().is_multiple_of(bones) {
            return Err(Error::InvalidRig(format!(
                "{} weight values do not form rows of {bones} bones",
                values.len()
            )));
        }
        let w = Self { bones, values };
        for (v, row) in w.rows().enumerate() {
            if row.iter().any(|&x| x < 0.0 || !x.is_finite()) {
                return Err(Error::InvalidRig(format!("negative weight at vertex {v}")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > Self::ROW_SUM_TOL {
                return Err(Error::InvalidRig(format!("weights of vertex {v} sum to {s}")));
            }
        }
        Ok(w)
    }

    pub fn bone_count(&self) -> usize {
        self.bones
    }

    pub fn vertex_count(&self) -> usize {
        self.values.len() / self.bones
    }

    pub fn row(&self, v: usize) -> &[f64] {
        &self.values[v * self.bones..(v + 1) * self.bones]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.bones)
    }
}

/// A rigged template skeleton. Bones form a tree rooted at a single joint.
#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    joints: Vec<Joint>,
    bones: Vec<Bone>,
    weights: Option<SkinWeights>,
    /// Joints ordered parents-first.
    order: Vec<usize>,
    /// Incoming bone per joint (`None` for the root).
    parent_bone: Vec<Option<usize>>,
}

impl Skeleton {
    pub fn new(joints: Vec<Joint>, bones: Vec<Bone>) -> Result<Self> {
        if joints.is_empty() {
            return Err(Error::InvalidRig("no joints".into()));
        }
        let mut names = HashMap::new();
        for (i, j) in joints.iter().enumerate() {
            if names.insert(j.name.as_str(), i).is_some() {
                return Err(Error::InvalidRig(format!("duplicate joint '{}'", j.name)));
            }
            if let Some(lim) = &j.limits {
                if lim.iter().any(|[lo, hi]| lo > hi) {
                    return Err(Error::InvalidRig(format!(
                        "joint '{}' has min > max in its angle limits",
                        j.name
                    )));
                }
            }
        }
        let n = joints.len();
        let mut parent_bone = vec![None; n];
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (b, bone) in bones.iter().enumerate() {
            if bone.parent >= n || bone.child >= n {
                return Err(Error::InvalidRig(format!(
                    "bone '{}' references a missing joint",
                    bone.name
                )));
            }
            if bone.parent == bone.child {
                return Err(Error::InvalidRig(format!("bone '{}' is a self loop", bone.name)));
            }
            if parent_bone[bone.child].is_some() {
                return Err(Error::InvalidRig(format!(
                    "joint '{}' has more than one parent bone",
                    joints[bone.child].name
                )));
            }
            if bone.rings == 0 || (bone.markers > 0 && bone.rings > bone.markers) {
                return Err(Error::InvalidRig(format!(
                    "bone '{}' has {} rings for {} markers",
                    bone.name, bone.rings, bone.markers
                )));
            }
            let [lo, hi] = bone.z_range;
            if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
                return Err(Error::InvalidRig(format!(
                    "bone '{}' has invalid z range {:?}",
                    bone.name, bone.z_range
                )));
            }
            parent_bone[bone.child] = Some(b);
            children[bone.parent].push(bone.child);
        }
        let roots: Vec<usize> = (0..n).filter(|&j| parent_bone[j].is_none()).collect();
        if roots.len() != 1 {
            return Err(Error::InvalidRig(format!(
                "bone graph must be a single tree, found {} roots (cyclic or disconnected)",
                roots.len()
            )));
        }
        let mut order = Vec::with_capacity(n);
        let mut stack = vec![roots[0]];
        while let Some(j) = stack.pop() {
            order.push(j);
            stack.extend(children[j].iter().rev());
        }
        if order.len() != n {
            return Err(Error::InvalidRig("bone graph contains a cycle".into()));
        }
        Ok(Self {
            joints,
            bones,
            weights: None,
            order,
            parent_bone,
        })
    }

    pub fn with_weights(mut self, weights: SkinWeights) -> Result<Self> {
        if weights.bone_count() != self.bones.len() {
            return Err(Error::InvalidRig(format!(
                "weights have {} columns for {} bones",
                weights.bone_count(),
                self.bones.len()
            )));
        }
        self.weights = Some(weights);
        Ok(self)
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn bones(&self) -> &[Bone] {
        &self.bones
    }

    pub fn weights(&self) -> Option<&SkinWeights> {
        self.weights.as_ref()
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    /// Total sparse marker count S.
    pub fn marker_count(&self) -> usize {
        self.bones.iter().map(|b| b.markers).sum()
    }

    pub fn root(&self) -> usize {
        self.order[0]
    }

    /// Joints in parents-first order.
    pub fn topological_order(&self) -> &[usize] {
        &self.order
    }

    pub fn parent_bone(&self, joint: usize) -> Option<usize> {
        self.parent_bone[joint]
    }

    /// Whether any bone starts at `joint` (i.e. its rotation moves something).
    pub fn is_articulated(&self, joint: usize) -> bool {
        self.bones.iter().any(|b| b.parent == joint)
    }

    pub fn bone_segment(&self, b: usize) -> (Point3<f64>, Point3<f64>) {
        let bone = &self.bones[b];
        (self.joints[bone.parent].position, self.joints[bone.child].position)
    }
}

#[cfg(test)]
pub(crate) mod testing {
    use super::*;

    pub fn bone(name: &str, parent: usize, child: usize, markers: usize) -> Bone {
        Bone {
            name: name.into(),
            parent,
            child,
            polar_axis: Vector3::x(),
            markers,
            rings: 1,
            z_range: [0.1, 0.9],
        }
    }

    pub fn joint(name: &str, p: [f64; 3]) -> Joint {
        Joint {
            name: name.into(),
            position: Point3::new(p[0], p[1], p[2]),
            limits: Some([[0.0, 0.0]; 3]),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::testing::*;
    use super::*;

    #[test]
    fn two_joint_rig() {
        let s = Skeleton::new(
            vec![joint("a", [0.0, 0.0, 0.0]), joint("b", [0.0, 0.0, 1.0])],
            vec![bone("ab", 0, 1, 3)],
        )
        .unwrap();
        assert_eq!(s.bones().len(), 1);
        assert_eq!(s.marker_count(), 3);
        assert_eq!(s.root(), 0);
    }

    #[test]
    fn cycle_rejected() {
        let joints = vec![
            joint("a", [0.0; 3]),
            joint("b", [1.0, 0.0, 0.0]),
            joint("c", [2.0, 0.0, 0.0]),
        ];
        let err = Skeleton::new(
            joints,
            vec![bone("ab", 0, 1, 1), bone("bc", 1, 2, 1), bone("ca", 2, 0, 1)],
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidRig(_)));
    }

    #[test]
    fn bad_limits_rejected() {
        let mut j = joint("a", [0.0; 3]);
        j.limits = Some([[0.5, -0.5], [0.0, 0.0], [0.0, 0.0]]);
        assert!(Skeleton::new(vec![j, joint("b", [1.0, 0.0, 0.0])], vec![bone("ab", 0, 1, 1)]).is_err());
    }

    #[test]
    fn weight_rows_validated() {
        assert!(SkinWeights::new(2, vec![0.5, 0.5, 1.0, 0.0]).is_ok());
        assert!(SkinWeights::new(2, vec![0.5, 0.4]).is_err());
        assert!(SkinWeights::new(2, vec![1.5, -0.5]).is_err());
        assert!(SkinWeights::new(2, vec![1.0, 0.0, 1.0]).is_err());
    }
}
