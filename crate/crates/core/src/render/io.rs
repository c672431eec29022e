//! Depth frames are stored as 16-bit grayscale PNG in millimeters with a
//! JSON camera sidecar `<png>.json`; labeled clouds as PLY with a label file
//! `<ply>.vmrk` (one column per point).

use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma};
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::{Camera, DepthFrame, Intrinsics, LabeledPointCloud};
use crate::error::{Error, Result};
use crate::mesh::io::{write_point_ply, PlyEncoding};
use crate::rig::RigidTransform;
use crate::softlabel::{label_colors, write_labels};

#[derive(Serialize, Deserialize)]
struct CameraRecord {
    intrinsics: Intrinsics,
    /// Camera-from-world rotation, row-major.
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
    depth_unit: f64,
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn write_depth_png(frame: &DepthFrame, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (w, h) = (frame.width() as u32, frame.height() as u32);
    let pixels: Vec<u16> = frame
        .depth
        .iter()
        .map(|&d| (d * 1000.0).round().clamp(0.0, f64::from(u16::MAX)) as u16)
        .collect();
    let img: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_raw(w, h, pixels).expect("buffer matches resolution");
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
    let r = frame.camera.extrinsic.rotation;
    let t = frame.camera.extrinsic.translation;
    let rec = CameraRecord {
        intrinsics: frame.camera.intrinsics,
        rotation: [0, 1, 2].map(|i| [r[(i, 0)], r[(i, 1)], r[(i, 2)]]),
        translation: [t.x, t.y, t.z],
        depth_unit: 0.001,
    };
    let side = with_suffix(path, ".json");
    let text = serde_json::to_string_pretty(&rec).map_err(|e| Error::parse("camera", e.to_string()))?;
    std::fs::write(&side, text).map_err(|e| Error::io(&side, e))
}

/// Reads a depth PNG and its camera sidecar. The frame carries no hit records.
pub fn read_depth_png(path: impl AsRef<Path>) -> Result<DepthFrame> {
    let path = path.as_ref();
    let side = with_suffix(path, ".json");
    let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let rec: CameraRecord = serde_json::from_str(&text).map_err(|e| Error::parse("camera", e.to_string()))?;
    let rot = Matrix3::from_fn(|i, j| rec.rotation[i][j]);
    let camera = Camera::new(rec.intrinsics, RigidTransform::new(rot, Vector3::from(rec.translation)))?;
    let img = image::open(path)
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?
        .into_luma16();
    if img.width() as usize != camera.width() || img.height() as usize != camera.height() {
        return Err(Error::ShapeMismatch(format!(
            "image is {}×{}, camera expects {}×{}",
            img.width(),
            img.height(),
            camera.width(),
            camera.height()
        )));
    }
    Ok(DepthFrame {
        camera,
        depth: img
            .into_raw()
            .into_iter()
            .map(|d| f64::from(d) * rec.depth_unit)
            .collect(),
        hits: None,
    })
}

/// Writes the points (colored by label if present) and, with labels, the
/// `<path>.vmrk` label file.
pub fn write_labeled_cloud(cloud: &LabeledPointCloud, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let colors = cloud.labels.as_ref().map(label_colors);
    write_point_ply(&cloud.points, colors.as_deref(), path, PlyEncoding::BinaryLittleEndian)?;
    if let Some(l) = &cloud.labels {
        write_labels(l, with_suffix(path, ".vmrk"))?;
    }
    Ok(())
}
