use nalgebra::{Matrix3, Point3, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Skeleton;
use crate::error::{Error, Result};

/// Rigid motion `x ↦ R x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    /// Rotation by `r` about the fixed point `pivot`.
    pub fn about(pivot: &Point3<f64>, r: Matrix3<f64>) -> Self {
        Self {
            rotation: r,
            translation: pivot.coords - r * pivot.coords,
        }
    }

    #[inline]
    pub fn apply(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    #[inline]
    pub fn apply_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Orthonormality error `‖RᵀR − I‖_max` and determinant check.
    pub fn is_rigid(&self, tol: f64) -> bool {
        let e = self.rotation.transpose() * self.rotation - Matrix3::identity();
        e.amax() <= tol && (self.rotation.determinant() - 1.0).abs() <= tol
    }
}

/// Per-bone rigid transforms relative to the rest pose.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    pub bones: Vec<RigidTransform>,
}

impl Pose {
    pub fn identity(bones: usize) -> Self {
        Self {
            bones: vec![RigidTransform::identity(); bones],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (b, t) in self.bones.iter().enumerate() {
            if !t.is_rigid(1e-9) {
                return Err(Error::InvalidInput(format!(
                    "bone {b} transform is not a proper rotation"
                )));
            }
        }
        Ok(())
    }

    /// `g ∘ T_b ∘ g⁻¹` for every bone: the same pose seen in a rigidly moved frame.
    pub fn conjugated(&self, g: &RigidTransform) -> Self {
        let gi = g.inverse();
        Self {
            bones: self.bones.iter().map(|t| g.compose(t).compose(&gi)).collect(),
        }
    }

    /// Forward kinematics from per-joint local rotations (rest-frame axes).
    ///
    /// A joint's rotation pivots about its rest position and moves every bone
    /// below it; bone `p → c` follows the accumulated transform of joint `p`.
    pub fn from_joint_rotations(skeleton: &Skeleton, rotations: &[Matrix3<f64>]) -> Result<Self> {
        let joints = skeleton.joints();
        if rotations.len() != joints.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} joint rotations for {} joints",
                rotations.len(),
                joints.len()
            )));
        }
        let mut global = vec![RigidTransform::identity(); joints.len()];
        for &j in skeleton.topological_order() {
            let local = RigidTransform::about(&joints[j].position, rotations[j]);
            global[j] = match skeleton.parent_bone(j) {
                Some(b) => global[skeleton.bones()[b].parent].compose(&local),
                None => local,
            };
        }
        let pose = Self {
            bones: skeleton.bones().iter().map(|b| global[b.parent]).collect(),
        };
        Ok(pose)
    }
}

/// Draws XYZ Euler angles uniformly inside each articulated joint's limit box.
/// Leaf joints (no outgoing bone) get zero angles and need no limits.
pub fn sample_joint_angles(skeleton: &Skeleton, rng: &mut impl Rng) -> Result<Vec<[f64; 3]>> {
    let mut out = Vec::with_capacity(skeleton.joints().len());
    for (j, joint) in skeleton.joints().iter().enumerate() {
        if !skeleton.is_articulated(j) {
            out.push([0.0; 3]);
            continue;
        }
        let limits = joint.limits.ok_or_else(|| Error::MissingLimits(joint.name.clone()))?;
        let mut a = [0.0; 3];
        for (k, [lo, hi]) in limits.iter().enumerate() {
            a[k] = if hi > lo { rng.gen_range(*lo..=*hi) } else { *lo };
        }
        out.push(a);
    }
    Ok(out)
}

pub(crate) fn euler_xyz(a: &[f64; 3]) -> Matrix3<f64> {
    // extrinsic X, then Y, then Z
    *Rotation3::from_euler_angles(a[0], a[1], a[2]).matrix()
}

/// Random pose within the skeleton's joint limits, reproducible from `seed`.
pub fn sample_random_pose(skeleton: &Skeleton, seed: u64) -> Result<Pose> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let angles = sample_joint_angles(skeleton, &mut rng)?;
    let rotations: Vec<Matrix3<f64>> = angles.iter().map(euler_xyz).collect();
    Pose::from_joint_rotations(skeleton, &rotations)
}
