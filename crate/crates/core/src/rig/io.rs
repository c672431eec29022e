//! JSON rig files.
//!
//! ```json
//! {
//!   "joints": [
//!     {"name": "hip", "position": [0, 1, 0], "limits": [[-0.5, 0.5], [0, 0], [-0.2, 0.2]]},
//!     {"name": "knee", "position": [0, 0.5, 0]}
//!   ],
//!   "bones": [
//!     {"name": "thigh", "parent": "hip", "child": "knee", "polar_axis": [0, 0, 1],
//!      "markers": 4, "rings": 2, "z_range": [0.1, 0.9]}
//!   ],
//!   "marker_count": 4,
//!   "weights": [[1.0], [1.0]]
//! }
//! ```
//!
//! `limits` (radians, XYZ Euler boxes), `rings` (default 1), `z_range`
//! (default `[0.1, 0.9]`), `marker_count` (checked against the per-bone sum)
//! and `weights` (one row per mesh vertex, one column per bone) are optional.

use std::path::Path;

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use super::{AngleLimits, Bone, Joint, Skeleton, SkinWeights};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RigFile {
    pub joints: Vec<JointRecord>,
    pub bones: Vec<BoneRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub marker_count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JointRecord {
    pub name: String,
    pub position: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limits: Option<AngleLimits>,
}

fn default_rings() -> usize {
    1
}

fn default_z_range() -> [f64; 2] {
    [0.1, 0.9]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoneRecord {
    pub name: String,
    pub parent: String,
    pub child: String,
    pub polar_axis: [f64; 3],
    pub markers: usize,
    #[serde(default = "default_rings")]
    pub rings: usize,
    #[serde(default = "default_z_range")]
    pub z_range: [f64; 2],
}

impl RigFile {
    pub fn into_skeleton(self) -> Result<Skeleton> {
        let joints: Vec<Joint> = self
            .joints
            .iter()
            .map(|j| Joint {
                name: j.name.clone(),
                position: Point3::from(j.position),
                limits: j.limits,
            })
            .collect();
        let lookup = |name: &str| {
            joints
                .iter()
                .position(|j| j.name == name)
                .ok_or_else(|| Error::InvalidRig(format!("unknown joint '{name}'")))
        };
        let mut bones = Vec::with_capacity(self.bones.len());
        for b in &self.bones {
            bones.push(Bone {
                name: b.name.clone(),
                parent: lookup(&b.parent)?,
                child: lookup(&b.child)?,
                polar_axis: Vector3::from(b.polar_axis),
                markers: b.markers,
                rings: b.rings,
                z_range: b.z_range,
            });
        }
        let skeleton = Skeleton::new(joints, bones)?;
        if let Some(expected) = self.marker_count {
            if expected != skeleton.marker_count() {
                return Err(Error::InvalidRig(format!(
                    "marker_count is {expected} but bones sum to {}",
                    skeleton.marker_count()
                )));
            }
        }
        match self.weights {
            Some(rows) => {
                let nb = skeleton.bones().len();
                if let Some((v, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != nb) {
                    return Err(Error::InvalidRig(format!(
                        "weight row {v} has {} entries for {nb} bones",
                        r.len()
                    )));
                }
                let weights = SkinWeights::new(nb, rows.into_iter().flatten().collect())?;
                skeleton.with_weights(weights)
            }
            None => Ok(skeleton),
        }
    }

    pub fn from_skeleton(skeleton: &Skeleton, include_weights: bool) -> Self {
        let joints = skeleton.joints();
        Self {
            joints: joints
                .iter()
                .map(|j| JointRecord {
                    name: j.name.clone(),
                    position: [j.position.x, j.position.y, j.position.z],
                    limits: j.limits,
                })
                .collect(),
            bones: skeleton
                .bones()
                .iter()
                .map(|b| BoneRecord {
                    name: b.name.clone(),
                    parent: joints[b.parent].name.clone(),
                    child: joints[b.child].name.clone(),
                    polar_axis: [b.polar_axis.x, b.polar_axis.y, b.polar_axis.z],
                    markers: b.markers,
                    rings: b.rings,
                    z_range: b.z_range,
                })
                .collect(),
            marker_count: Some(skeleton.marker_count()),
            weights: if include_weights {
                skeleton.weights().map(|w| w.rows().map(<[f64]>::to_vec).collect())
            } else {
                None
            },
        }
    }
}

pub fn parse_skeleton(text: &str) -> Result<Skeleton> {
    let file: RigFile = serde_json::from_str(text).map_err(|e| Error::parse("rig", e.to_string()))?;
    file.into_skeleton()
}

pub fn load_skeleton(path: impl AsRef<Path>) -> Result<Skeleton> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_skeleton(&text)
}

pub fn save_skeleton(skeleton: &Skeleton, path: impl AsRef<Path>, include_weights: bool) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(&RigFile::from_skeleton(skeleton, include_weights))
        .map_err(|e| Error::parse("rig", e.to_string()))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
