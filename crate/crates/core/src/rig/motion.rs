//! Keyframe motion clips.
//!
//! ```text
//! # comment
//! joints hip knee
//! frame 0.0   1 0 0 0   0.92 0.38 0 0
//! frame 0.033 1 0 0 0   0.87 0.49 0 0
//! ```
//!
//! Each `frame` line carries a time (seconds) followed by one local rotation
//! quaternion `w x y z` per joint named on the `joints` line. Joints not named
//! stay at rest. Quaternions are normalized on load.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::pose::{euler_xyz, sample_joint_angles};
use super::{Pose, Skeleton};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Keyframe {
    pub time: f64,
    pub rotations: Vec<UnitQuaternion<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionClip {
    pub joints: Vec<String>,
    pub frames: Vec<Keyframe>,
}

impl MotionClip {
    /// Replays every keyframe verbatim as a pose of `skeleton`.
    pub fn poses(&self, skeleton: &Skeleton) -> Result<Vec<Pose>> {
        let map: Vec<usize> = self
            .joints
            .iter()
            .map(|n| {
                skeleton
                    .joint_index(n)
                    .ok_or_else(|| Error::InvalidInput(format!("clip joint '{n}' not in rig")))
            })
            .collect::<Result<_>>()?;
        self.frames
            .iter()
            .map(|f| {
                let mut rot = vec![Matrix3::identity(); skeleton.joints().len()];
                for (&j, q) in map.iter().zip(&f.rotations) {
                    rot[j] = *q.to_rotation_matrix().matrix();
                }
                Pose::from_joint_rotations(skeleton, &rot)
            })
            .collect()
    }
}

pub fn parse_motion_clip(text: &str) -> Result<MotionClip> {
    let mut joints: Option<Vec<String>> = None;
    let mut frames = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |m: &str| Error::parse("motion clip", format!("line {}: {m}", n + 1));
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("joints") => {
                if joints.is_some() {
                    return Err(err("duplicate joints line"));
                }
                joints = Some(tok.map(str::to_owned).collect());
            }
            Some("frame") => {
                let names = joints.as_ref().ok_or_else(|| err("frame before joints line"))?;
                let vals: Vec<f64> = tok
                    .map(|t| t.parse::<f64>().map_err(|_| err("bad number")))
                    .collect::<Result<_>>()?;
                if vals.len() != 1 + 4 * names.len() {
                    return Err(err(&format!(
                        "expected {} values, found {}",
                        1 + 4 * names.len(),
                        vals.len()
                    )));
                }
                let rotations = vals[1..]
                    .chunks_exact(4)
                    .map(|q| {
                        let q = Quaternion::new(q[0], q[1], q[2], q[3]);
                        if q.norm() < 1e-12 {
                            Err(err("zero quaternion"))
                        } else {
                            Ok(UnitQuaternion::from_quaternion(q))
                        }
                    })
                    .collect::<Result<_>>()?;
                frames.push(Keyframe {
                    time: vals[0],
                    rotations,
                });
            }
            Some(other) => return Err(err(&format!("unknown record '{other}'"))),
            None => {}
        }
    }
    Ok(MotionClip {
        joints: joints.ok_or_else(|| Error::parse("motion clip", "missing joints line"))?,
        frames,
    })
}

/// Clip of `count` random poses; frame `i` replays `sample_random_pose(skeleton, seed + i)`.
pub fn random_pose_clip(skeleton: &Skeleton, seed: u64, count: usize) -> Result<MotionClip> {
    let joints: Vec<String> = skeleton.joints().iter().map(|j| j.name.clone()).collect();
    let frames = (0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
            let angles = sample_joint_angles(skeleton, &mut rng)?;
            Ok(Keyframe {
                time: i as f64,
                rotations: angles
                    .iter()
                    .map(|a| UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(euler_xyz(a))))
                    .collect(),
            })
        })
        .collect::<Result<_>>()?;
    Ok(MotionClip { joints, frames })
}

pub fn load_motion_clip(path: impl AsRef<Path>) -> Result<MotionClip> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_motion_clip(&text)
}

pub fn write_motion_clip(clip: &MotionClip, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut s = format!("joints {}\n", clip.joints.join(" "));
    for f in &clip.frames {
        let _ = write!(s, "frame {:?}", f.time);
        for q in &f.rotations {
            let _ = write!(s, " {:?} {:?} {:?} {:?}", q.w, q.i, q.j, q.k);
        }
        s.push('\n');
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}
