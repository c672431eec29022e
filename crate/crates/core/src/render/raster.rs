use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::Camera;
use crate::mesh::{SurfacePoint, TriangleMesh};

/// A rendered or captured depth image, row-major (`v · width + u`).
#[derive(Debug, Clone, PartialEq)]
pub struct DepthFrame {
    pub camera: Camera,
    /// Camera-space z in meters; 0 where nothing was hit.
    pub depth: Vec<f64>,
    /// Source surface point per pixel, for synthetic frames only.
    pub hits: Option<Vec<Option<SurfacePoint>>>,
}

impl DepthFrame {
    pub fn empty(camera: Camera) -> Self {
        let n = camera.width() * camera.height();
        Self {
            camera,
            depth: vec![0.0; n],
            hits: Some(vec![None; n]),
        }
    }

    pub fn width(&self) -> usize {
        self.camera.width()
    }

    pub fn height(&self) -> usize {
        self.camera.height()
    }

    #[inline]
    pub fn depth_at(&self, u: usize, v: usize) -> f64 {
        self.depth[v * self.width() + u]
    }

    pub fn hit_at(&self, u: usize, v: usize) -> Option<SurfacePoint> {
        self.hits.as_ref().and_then(|h| h[v * self.width() + u])
    }

    pub fn valid_pixels(&self) -> usize {
        self.depth.iter().filter(|&&d| d > 0.0).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderOptions {
    /// Triangles with any vertex at camera z below this are skipped.
    pub near: f64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self { near: 1e-3 }
    }
}

pub fn render_depth(mesh: &TriangleMesh, camera: &Camera) -> DepthFrame {
    render_depth_with(mesh, camera, &RenderOptions::default())
}

#[inline]
fn edge(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

/// Z-buffer rasterization sampling each pixel at its center. Barycentric
/// coordinates are interpolated perspective-correctly; ties in depth keep
/// the lower triangle index.
pub fn render_depth_with(mesh: &TriangleMesh, camera: &Camera, opts: &RenderOptions) -> DepthFrame {
    let (w, h) = (camera.width(), camera.height());
    let k = camera.intrinsics;
    let mut zbuf = vec![f64::INFINITY; w * h];
    let mut hits: Vec<Option<SurfacePoint>> = vec![None; w * h];
    let cam_pts: Vec<_> = mesh.vertices().iter().map(|p| camera.to_camera(p)).collect();
    const INSIDE_EPS: f64 = 1e-9;

    for (t, tri) in mesh.triangles().iter().enumerate() {
        let p = tri.map(|i| cam_pts[i]);
        if p.iter().any(|q| q.z < opts.near) {
            continue;
        }
        let s = p.map(|q| [k.fx * q.x / q.z + k.cx, k.fy * q.y / q.z + k.cy]);
        let area = edge(s[0], s[1], s[2]);
        if area.abs() < 1e-14 {
            continue;
        }
        let umin = s.iter().map(|q| q[0]).fold(f64::INFINITY, f64::min).ceil().max(0.0);
        let umax = s
            .iter()
            .map(|q| q[0])
            .fold(f64::NEG_INFINITY, f64::max)
            .floor()
            .min(w as f64 - 1.0);
        let vmin = s.iter().map(|q| q[1]).fold(f64::INFINITY, f64::min).ceil().max(0.0);
        let vmax = s
            .iter()
            .map(|q| q[1])
            .fold(f64::NEG_INFINITY, f64::max)
            .floor()
            .min(h as f64 - 1.0);
        if umin > umax || vmin > vmax {
            continue;
        }
        let inv_z = p.map(|q| 1.0 / q.z);
        for v in vmin as usize..=vmax as usize {
            for u in umin as usize..=umax as usize {
                let px = [u as f64, v as f64];
                let l = [
                    edge(s[1], s[2], px) / area,
                    edge(s[2], s[0], px) / area,
                    edge(s[0], s[1], px) / area,
                ];
                if l.iter().any(|&x| x < -INSIDE_EPS) {
                    continue;
                }
                let q = [l[0] * inv_z[0], l[1] * inv_z[1], l[2] * inv_z[2]];
                let qs = q[0] + q[1] + q[2];
                if !(qs > 0.0) {
                    continue;
                }
                let z = 1.0 / qs;
                let idx = v * w + u;
                if z < zbuf[idx] {
                    zbuf[idx] = z;
                    let mut b = q.map(|x| (x * z).max(0.0));
                    let bs = b[0] + b[1] + b[2];
                    b.iter_mut().for_each(|x| *x /= bs);
                    hits[idx] = Some(SurfacePoint {
                        triangle: t,
                        barycentric: b,
                    });
                }
            }
        }
    }
    DepthFrame {
        camera: *camera,
        depth: zbuf.into_iter().map(|z| if z.is_finite() { z } else { 0.0 }).collect(),
        hits: Some(hits),
    }
}

/// Adds zero-mean Gaussian noise with `σ = scale · z²` to every valid pixel.
pub fn add_depth_noise(frame: &mut DepthFrame, scale: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("valid normal");
    for d in frame.depth.iter_mut().filter(|d| **d > 0.0) {
        let noisy = *d + scale * *d * *d * unit.sample(&mut rng);
        *d = noisy.max(f64::MIN_POSITIVE);
    }
}

#[cfg(test)]
mod tests {
    use nalgebra::{Point3, Vector3};

    use super::*;
    use crate::mesh::{primitives, ray_intersect};
    use crate::render::Intrinsics;

    fn front_camera(size: usize, f: f64, z: f64) -> Camera {
        Camera::look_at(
            Intrinsics::centered(size, size, f, f),
            &Point3::new(0.0, 0.0, z),
            &Point3::origin(),
            &Vector3::y(),
        )
        .unwrap()
    }

    #[test]
    fn square_center_depth() {
        let mesh = primitives::square(0.5, 0.0);
        let frame = render_depth(&mesh, &front_camera(33, 30.0, 2.0));
        assert!((frame.depth_at(16, 16) - 2.0).abs() < 1e-6);
        assert_eq!(frame.depth_at(0, 0), 0.0);
        assert!(frame.hit_at(16, 16).is_some());
    }

    #[test]
    fn behind_camera_is_empty() {
        let mesh = primitives::icosphere(0.3, 1);
        let cam = Camera::look_at(
            Intrinsics::centered(32, 32, 30.0, 30.0),
            &Point3::new(0.0, 0.0, 2.0),
            &Point3::new(0.0, 0.0, 5.0),
            &Vector3::y(),
        )
        .unwrap();
        let frame = render_depth(&mesh, &cam);
        assert_eq!(frame.valid_pixels(), 0);
    }

    #[test]
    fn agrees_with_ray_caster() {
        let mesh = primitives::icosphere(0.5, 3);
        let cam = Camera::look_at(
            Intrinsics::centered(64, 64, 100.0, 100.0),
            &Point3::new(0.4, 0.3, 1.8),
            &Point3::new(0.0, 0.05, 0.0),
            &Vector3::y(),
        )
        .unwrap();
        let frame = render_depth(&mesh, &cam);
        let to_world = cam.world_from_camera();
        let (mut hit, mut agree) = (0, 0);
        for v in 0..64 {
            for u in 0..64 {
                let d = frame.depth_at(u, v);
                let ray = cam.pixel_ray(u as f64, v as f64);
                let dir = to_world.apply_vector(&ray.normalize());
                let oracle = ray_intersect(&mesh, &cam.center(), &dir).unwrap();
                if d > 0.0 || oracle.is_some() {
                    hit += 1;
                    if let Some(o) = oracle {
                        if (o.distance / ray.norm() - d).abs() <= 1e-4 {
                            agree += 1;
                        }
                    }
                }
            }
        }
        assert!(hit > 1000);
        assert!(agree as f64 >= 0.999 * hit as f64, "{agree}/{hit}");
    }

    #[test]
    fn noise_is_seeded() {
        let mesh = primitives::square(0.5, 0.0);
        let clean = render_depth(&mesh, &front_camera(17, 15.0, 2.0));
        let mut a = clean.clone();
        let mut b = clean.clone();
        add_depth_noise(&mut a, 0.01, 4);
        add_depth_noise(&mut b, 0.01, 4);
        assert_eq!(a, b);
        assert_ne!(a.depth, clean.depth);
        assert_eq!(a.valid_pixels(), clean.valid_pixels());
    }
}
