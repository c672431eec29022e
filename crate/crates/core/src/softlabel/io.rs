//! Label files.
//!
//! Binary layout, little-endian: magic `VMRK`, version `u32 = 1`, `S: u32`,
//! `D: u32`, then `S·D` `f32` values in marker-major order.

use std::io::{Read, Write};
use std::path::Path;

use super::SoftLabelField;
use crate::error::{Error, Result};
use crate::mesh::io::{write_ply, PlyEncoding};
use crate::mesh::TriangleMesh;
use crate::rig::{write_marker_sidecar, SparseMarkerSet};

const MAGIC: &[u8; 4] = b"VMRK";
const VERSION: u32 = 1;

pub fn write_labels(field: &SoftLabelField, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::with_capacity(16 + 4 * field.values().len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(field.marker_count() as u32).to_le_bytes());
    buf.extend_from_slice(&(field.vertex_count() as u32).to_le_bytes());
    for v in field.values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<SoftLabelField> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(Error::parse("label file", "missing VMRK header"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    if word(4) != VERSION {
        return Err(Error::parse("label file", format!("unsupported version {}", word(4))));
    }
    let (s, d) = (word(8) as usize, word(12) as usize);
    let body = &bytes[16..];
    if body.len() != 4 * s * d {
        return Err(Error::parse(
            "label file",
            format!("expected {} value bytes, found {}", 4 * s * d, body.len()),
        ));
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    SoftLabelField::new(s, d, values)
}

/// Fixed, well-spread color for marker `s` (golden-ratio hue walk).
pub fn marker_color(s: usize) -> [f64; 3] {
    let h = (s as f64 * 0.618_033_988_749_895).fract() * 6.0;
    let (sat, val) = (0.75, 0.95);
    let c = val * sat;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let m = val - c;
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    [r + m, g + m, b + m]
}

/// Per-vertex colors blending each marker color by its affinity.
pub fn label_colors(field: &SoftLabelField) -> Vec<[u8; 3]> {
    let palette: Vec<[f64; 3]> = (0..field.marker_count()).map(marker_color).collect();
    (0..field.vertex_count())
        .map(|d| {
            let mut acc = [0.0; 3];
            for (s, col) in palette.iter().enumerate() {
                let w = f64::from(field.get(s, d)).clamp(0.0, 1.0);
                for k in 0..3 {
                    acc[k] += w * col[k];
                }
            }
            acc.map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportMode {
    /// Label file with entries clamped into `[0, 1]`.
    Soft,
    /// Label file with the argmax one-hot of each column.
    Hard,
    /// PLY mesh colored by blended marker colors.
    Colormap,
}

pub fn export_labels(
    field: &SoftLabelField,
    mesh: &TriangleMesh,
    mode: ExportMode,
    path: impl AsRef<Path>,
) -> Result<()> {
    if field.vertex_count() != mesh.vertex_count() {
        return Err(Error::ShapeMismatch(format!(
            "{} labeled vertices for a mesh of {}",
            field.vertex_count(),
            mesh.vertex_count()
        )));
    }
    match mode {
        ExportMode::Soft => write_labels(&field.clamped(), path),
        ExportMode::Hard => write_labels(&field.to_hard(), path),
        ExportMode::Colormap => {
            let colored = mesh.clone().with_colors(label_colors(field))?;
            write_ply(&colored, path, PlyEncoding::BinaryLittleEndian)
        }
    }
}

/// Marker provenance next to a label file, as `<labels>.markers.txt`.
pub fn write_provenance_sidecar(markers: &SparseMarkerSet, labels_path: impl AsRef<Path>) -> Result<()> {
    let mut p = labels_path.as_ref().as_os_str().to_owned();
    p.push(".markers.txt");
    write_marker_sidecar(markers, Path::new(&p))
}
