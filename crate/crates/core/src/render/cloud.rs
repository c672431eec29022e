use nalgebra::{Point3, Vector3};

use super::DepthFrame;
use crate::error::{Error, Result};
use crate::mesh::TriangleMesh;
use crate::rig::RigidTransform;
use crate::softlabel::SoftLabelField;

/// Where a point came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointSource {
    Pixel { frame: u32, u: u32, v: u32 },
    Vertex(usize),
}

/// Points with optional soft labels (`S × N`, one column per point) and
/// optional unit normals facing away from the surface.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPointCloud {
    pub points: Vec<Point3<f64>>,
    pub labels: Option<SoftLabelField>,
    pub sources: Vec<PointSource>,
    pub normals: Option<Vec<Vector3<f64>>>,
}

impl LabeledPointCloud {
    pub fn new(points: Vec<Point3<f64>>, labels: Option<SoftLabelField>, sources: Vec<PointSource>) -> Result<Self> {
        if sources.len() != points.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} sources for {} points",
                sources.len(),
                points.len()
            )));
        }
        if let Some(l) = &labels {
            if l.vertex_count() != points.len() {
                return Err(Error::ShapeMismatch(format!(
                    "{} label columns for {} points",
                    l.vertex_count(),
                    points.len()
                )));
            }
        }
        Ok(Self {
            points,
            labels,
            sources,
            normals: None,
        })
    }

    pub fn with_normals(mut self, normals: Vec<Vector3<f64>>) -> Result<Self> {
        if normals.len() != self.points.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} normals for {} points",
                normals.len(),
                self.points.len()
            )));
        }
        self.normals = Some(normals);
        Ok(self)
    }

    /// The mesh's vertex set with its area-weighted vertex normals, carrying
    /// per-vertex labels if given.
    pub fn from_mesh(mesh: &TriangleMesh, labels: Option<SoftLabelField>) -> Result<Self> {
        Self::new(
            mesh.vertices().to_vec(),
            labels,
            (0..mesh.vertex_count()).map(PointSource::Vertex).collect(),
        )?
        .with_normals(mesh.vertex_normals())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn transformed(&self, t: &RigidTransform) -> Self {
        Self {
            points: self.points.iter().map(|p| t.apply(p)).collect(),
            normals: self
                .normals
                .as_ref()
                .map(|ns| ns.iter().map(|n| t.apply_vector(n)).collect()),
            ..self.clone()
        }
    }

    /// Relabels pixel sources with frame id `frame`.
    pub fn with_frame(mut self, frame: u32) -> Self {
        for s in &mut self.sources {
            if let PointSource::Pixel { frame: f, .. } = s {
                *f = frame;
            }
        }
        self
    }

    /// Concatenation; labels and normals are kept only if every part has them.
    pub fn concat(parts: &[Self]) -> Result<Self> {
        let points = parts.iter().flat_map(|c| c.points.iter().copied()).collect();
        let sources = parts.iter().flat_map(|c| c.sources.iter().copied()).collect();
        let labels = if !parts.is_empty() && parts.iter().all(|c| c.labels.is_some()) {
            let s = parts[0].labels.as_ref().map_or(0, SoftLabelField::marker_count);
            if parts
                .iter()
                .any(|c| c.labels.as_ref().map(SoftLabelField::marker_count) != Some(s))
            {
                return Err(Error::ShapeMismatch("clouds disagree on marker count".into()));
            }
            let n: usize = parts.iter().map(Self::len).sum();
            let mut values = Vec::with_capacity(s * n);
            for m in 0..s {
                for c in parts {
                    values.extend_from_slice(c.labels.as_ref().expect("checked").marker_row(m));
                }
            }
            Some(SoftLabelField::new(s, n, values)?)
        } else {
            None
        };
        let cloud = Self::new(points, labels, sources)?;
        if !parts.is_empty() && parts.iter().all(|c| c.normals.is_some()) {
            let normals = parts
                .iter()
                .flat_map(|c| c.normals.as_ref().expect("checked").iter().copied())
                .collect();
            return cloud.with_normals(normals);
        }
        Ok(cloud)
    }
}

/// Neighbor depths further than this many pixel footprints away are treated
/// as belonging to another surface.
const NORMAL_JUMP_PIXELS: f64 = 8.0;

/// Camera-space normal at pixel `(u, v)` from depth differences with its
/// grid neighbors, oriented toward the camera. Falls back to the reversed
/// viewing ray when a direction has no neighbor on the same surface.
fn pixel_normal(frame: &DepthFrame, u: usize, v: usize, p: &Point3<f64>) -> Vector3<f64> {
    let (w, h) = (frame.width(), frame.height());
    let d = frame.depth[v * w + u];
    let k = &frame.camera.intrinsics;
    let jump = NORMAL_JUMP_PIXELS * d / k.fx.min(k.fy);
    let point = |uu: usize, vv: usize| -> Option<Point3<f64>> {
        let dn = frame.depth[vv * w + uu];
        (dn > 0.0 && (dn - d).abs() <= jump).then(|| Point3::from(frame.camera.pixel_ray(uu as f64, vv as f64) * dn))
    };
    let tangent = |a: Option<Point3<f64>>, b: Option<Point3<f64>>| match (a, b) {
        (Some(a), Some(b)) => Some(b - a),
        (Some(a), None) => Some(p - a),
        (None, Some(b)) => Some(b - p),
        (None, None) => None,
    };
    let tu = tangent(
        (u > 0).then(|| point(u - 1, v)).flatten(),
        (u + 1 < w).then(|| point(u + 1, v)).flatten(),
    );
    let tv = tangent(
        (v > 0).then(|| point(u, v - 1)).flatten(),
        (v + 1 < h).then(|| point(u, v + 1)).flatten(),
    );
    let toward_camera = -p.coords.normalize();
    let n = match (tu, tv) {
        (Some(a), Some(b)) => a.cross(&b),
        _ => return toward_camera,
    };
    match n.try_normalize(1e-15) {
        Some(n) if n.dot(&toward_camera) < 0.0 => -n,
        Some(n) => n,
        None => toward_camera,
    }
}

fn pixel_points(frame: &DepthFrame) -> impl Iterator<Item = (usize, usize, Point3<f64>)> + '_ {
    let w = frame.width();
    frame
        .depth
        .iter()
        .enumerate()
        .filter(|(_, &d)| d > 0.0)
        .map(move |(i, &d)| {
            let (u, v) = (i % w, i / w);
            let p = Point3::from(frame.camera.pixel_ray(u as f64, v as f64) * d);
            (u, v, p)
        })
}

/// One point per valid pixel, `depth · (x, y, 1)` along the pixel ray, with
/// a normal estimated from neighboring depths.
pub fn backproject(frame: &DepthFrame, to_world: bool) -> LabeledPointCloud {
    let to = frame.camera.world_from_camera();
    let mut points = Vec::new();
    let mut normals = Vec::new();
    let mut sources = Vec::new();
    for (u, v, p) in pixel_points(frame) {
        let n = pixel_normal(frame, u, v, &p);
        if to_world {
            points.push(to.apply(&p));
            normals.push(to.apply_vector(&n));
        } else {
            points.push(p);
            normals.push(n);
        }
        sources.push(PointSource::Pixel {
            frame: 0,
            u: u as u32,
            v: v as u32,
        });
    }
    LabeledPointCloud {
        points,
        labels: None,
        sources,
        normals: Some(normals),
    }
}

/// Back-projects a synthetic frame (camera space) and labels every pixel
/// with the barycentric blend of its triangle's vertex labels.
pub fn label_frame(frame: &DepthFrame, mesh: &TriangleMesh, field: &SoftLabelField) -> Result<LabeledPointCloud> {
    let hits = frame
        .hits
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("depth frame has no hit records".into()))?;
    if field.vertex_count() != mesh.vertex_count() {
        return Err(Error::ShapeMismatch(format!(
            "{} labeled vertices for a mesh of {}",
            field.vertex_count(),
            mesh.vertex_count()
        )));
    }
    let cloud = backproject(frame, false);
    let s = field.marker_count();
    let n = cloud.len();
    let mut values = vec![0.0f32; s * n];
    let w = frame.width();
    for (j, src) in cloud.sources.iter().enumerate() {
        let PointSource::Pixel { u, v, .. } = *src else {
            unreachable!("backprojected points come from pixels")
        };
        let hit = hits[v as usize * w + u as usize]
            .ok_or_else(|| Error::InvalidInput(format!("pixel ({u}, {v}) has depth but no hit")))?;
        hit.check(mesh)?;
        let tri = mesh.triangles()[hit.triangle];
        let mut col = vec![0.0f64; s];
        for (&vi, &b) in tri.iter().zip(&hit.barycentric) {
            if b != 0.0 {
                for (m, c) in col.iter_mut().enumerate() {
                    *c += b * f64::from(field.get(m, vi));
                }
            }
        }
        let sum: f64 = col.iter().sum();
        for (m, c) in col.into_iter().enumerate() {
            values[m * n + j] = (c / sum) as f32;
        }
    }
    Ok(LabeledPointCloud {
        labels: Some(SoftLabelField::new(s, n, values)?),
        ..cloud
    })
}
