//! Pinhole depth rendering of meshes and back-projection of depth frames
//! into (optionally labeled) point clouds.
//!
//! Cameras follow the computer-vision convention: +x right, +y down, +z
//! forward. Pixel `(u, v)` has its center at integer coordinates, and depth
//! is the camera-space z coordinate.

mod cloud;
mod io;
mod raster;

use nalgebra::{Matrix3, Point2, Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::TriangleMesh;
use crate::rig::RigidTransform;

pub use cloud::{backproject, label_frame, LabeledPointCloud, PointSource};
pub use io::{read_depth_png, write_depth_png, write_labeled_cloud};
pub use raster::{add_depth_noise, render_depth, render_depth_with, DepthFrame, RenderOptions};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    /// Principal point at the image center.
    pub fn centered(width: usize, height: usize, fx: f64, fy: f64) -> Self {
        Self {
            fx,
            fy,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) || self.width == 0 || self.height == 0 {
            return Err(Error::InvalidInput(format!(
                "camera needs positive focal lengths and resolution, got {self:?}"
            )));
        }
        Ok(())
    }
}

impl Default for Intrinsics {
    /// 320 × 288 at 252 px focal length, roughly a consumer time-of-flight
    /// sensor in its narrow binned mode.
    fn default() -> Self {
        Self::centered(320, 288, 252.0, 252.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub intrinsics: Intrinsics,
    /// Camera-from-world rigid transform.
    pub extrinsic: RigidTransform,
}

impl Camera {
    pub fn new(intrinsics: Intrinsics, extrinsic: RigidTransform) -> Result<Self> {
        intrinsics.validate()?;
        if !extrinsic.is_rigid(1e-9) {
            return Err(Error::InvalidInput("camera rotation is not orthonormal".into()));
        }
        Ok(Self { intrinsics, extrinsic })
    }

    /// Camera at `eye` looking at `target`; `up` fixes the roll (image −y).
    pub fn look_at(intrinsics: Intrinsics, eye: &Point3<f64>, target: &Point3<f64>, up: &Vector3<f64>) -> Result<Self> {
        let z = target - eye;
        if z.norm() < 1e-12 {
            return Err(Error::InvalidInput("camera eye coincides with target".into()));
        }
        let z = z.normalize();
        let x = z.cross(up);
        if x.norm() < 1e-9 {
            return Err(Error::InvalidInput(
                "up vector is parallel to the view direction".into(),
            ));
        }
        let x = x.normalize();
        let y = z.cross(&x);
        let r = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        Self::new(intrinsics, RigidTransform::new(r, -(r * eye.coords)))
    }

    pub fn width(&self) -> usize {
        self.intrinsics.width
    }

    pub fn height(&self) -> usize {
        self.intrinsics.height
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Point3<f64> {
        self.extrinsic.inverse().apply(&Point3::origin())
    }

    pub fn world_from_camera(&self) -> RigidTransform {
        self.extrinsic.inverse()
    }

    pub fn to_camera(&self, p: &Point3<f64>) -> Point3<f64> {
        self.extrinsic.apply(p)
    }

    /// Sub-pixel image coordinates of a camera-space point in front of the camera.
    pub fn project_camera(&self, p: &Point3<f64>) -> Option<Point2<f64>> {
        let k = &self.intrinsics;
        (p.z > 0.0).then(|| Point2::new(k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy))
    }

    pub fn project(&self, p: &Point3<f64>) -> Option<Point2<f64>> {
        self.project_camera(&self.to_camera(p))
    }

    /// Camera-space ray through pixel `(u, v)`, scaled to unit depth (z = 1).
    pub fn pixel_ray(&self, u: f64, v: f64) -> Vector3<f64> {
        let k = &self.intrinsics;
        Vector3::new((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViewStrategy {
    /// Uniform azimuths about the world y axis, elevations cycling 0°, 20°, −20°.
    Ring,
    /// Fibonacci-sphere directions.
    Sphere,
}

const RING_ELEVATIONS_DEG: [f64; 3] = [0.0, 20.0, -20.0];

/// `n` cameras at distance `radius` from `center`, all looking at it.
/// World +y is up; with the ring strategy camera 0 sits on the +x side.
pub fn sample_viewpoints(
    n: usize,
    strategy: ViewStrategy,
    radius: f64,
    center: &Point3<f64>,
    intrinsics: Intrinsics,
) -> Result<Vec<Camera>> {
    if n == 0 {
        return Err(Error::InvalidInput("at least one viewpoint is required".into()));
    }
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let dir = match strategy {
                ViewStrategy::Ring => {
                    let az = std::f64::consts::TAU * i as f64 / n as f64;
                    let el = RING_ELEVATIONS_DEG[i % 3].to_radians();
                    Vector3::new(el.cos() * az.cos(), el.sin(), el.cos() * az.sin())
                }
                ViewStrategy::Sphere => {
                    let y = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
                    let r = (1.0 - y * y).sqrt();
                    let t = golden * i as f64;
                    Vector3::new(r * t.cos(), y, r * t.sin())
                }
            };
            let up = if dir.y.abs() > 0.99 { Vector3::z() } else { Vector3::y() };
            Camera::look_at(intrinsics, &(center + dir * radius), center, &up)
        })
        .collect()
}

/// Camera distance at which the bounding sphere about `center` fills the
/// narrower field of view with a 10% margin.
pub fn fit_view_distance(mesh: &TriangleMesh, center: &Point3<f64>, k: &Intrinsics) -> f64 {
    let r = mesh.vertices().iter().map(|p| (p - center).norm()).fold(0.0, f64::max);
    let half_w = (k.cx.max(k.width as f64 - 1.0 - k.cx)) / k.fx;
    let half_h = (k.cy.max(k.height as f64 - 1.0 - k.cy)) / k.fy;
    let tan_half = half_w.min(half_h);
    1.1 * r * (1.0 + tan_half * tan_half).sqrt() / tan_half
}
