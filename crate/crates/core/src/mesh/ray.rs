use nalgebra::{Point3, Vector3};

use super::{SurfacePoint, TriangleMesh};
use crate::error::{Error, Result};

/// Edge tolerance in barycentric units; rays grazing a shared edge or vertex
/// still report a hit.
const EDGE_EPS: f64 = 1e-12;
/// Minimum ray parameter counted as a forward hit.
const T_MIN: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    pub point: SurfacePoint,
    pub distance: f64,
}

/// Möller–Trumbore intersection. Returns `(t, u, v)` with barycentric
/// coordinates `(1 − u − v, u, v)` relative to `(a, b, c)`.
#[inline]
pub fn ray_triangle(
    origin: &Point3<f64>,
    dir: &Vector3<f64>,
    a: &Point3<f64>,
    b: &Point3<f64>,
    c: &Point3<f64>,
) -> Option<(f64, f64, f64)> {
    let e1 = b - a;
    let e2 = c - a;
    let p = dir.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-300 {
        return None;
    }
    let inv = 1.0 / det;
    let s = origin - a;
    let u = s.dot(&p) * inv;
    if !(-EDGE_EPS..=1.0 + EDGE_EPS).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = dir.dot(&q) * inv;
    if v < -EDGE_EPS || u + v > 1.0 + EDGE_EPS {
        return None;
    }
    let t = e2.dot(&q) * inv;
    (t > T_MIN).then_some((t, u, v))
}

pub(crate) fn hit_from(triangle: usize, t: f64, u: f64, v: f64) -> RayHit {
    let mut bary = [1.0 - u - v, u, v].map(|x| x.clamp(0.0, 1.0));
    let s: f64 = bary.iter().sum();
    bary.iter_mut().for_each(|x| *x /= s);
    RayHit {
        point: SurfacePoint {
            triangle,
            barycentric: bary,
        },
        distance: t,
    }
}

pub(crate) fn check_unit(direction: &Vector3<f64>) -> Result<()> {
    let norm = direction.norm();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(Error::NonUnitDirection { norm });
    }
    Ok(())
}

/// Nearest forward intersection of a ray with the mesh (exhaustive scan).
///
/// Ties in distance resolve to the lowest triangle index.
pub fn ray_intersect(mesh: &TriangleMesh, origin: &Point3<f64>, direction: &Vector3<f64>) -> Result<Option<RayHit>> {
    check_unit(direction)?;
    let verts = mesh.vertices();
    let mut best: Option<(usize, f64, f64, f64)> = None;
    for (i, tri) in mesh.triangles().iter().enumerate() {
        if let Some((t, u, v)) = ray_triangle(origin, direction, &verts[tri[0]], &verts[tri[1]], &verts[tri[2]]) {
            if best.is_none_or(|b| t < b.1) {
                best = Some((i, t, u, v));
            }
        }
    }
    Ok(best.map(|(i, t, u, v)| hit_from(i, t, u, v)))
}
