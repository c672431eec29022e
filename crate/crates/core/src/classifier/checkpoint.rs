//! Checkpoint layout: `VMCK`, format version (u32), config JSON length (u32),
//! config JSON, parameter count (u64), then little-endian f32 parameters.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ClassifierModel, ModelConfig};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"VMCK";
const VERSION: u32 = 1;

pub fn save_checkpoint(model: &ClassifierModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let json = serde_json::to_vec(model.config()).map_err(|e| Error::parse("checkpoint", e.to_string()))?;
    let mut body = Vec::with_capacity(20 + json.len() + 4 * model.parameter_count());
    body.extend_from_slice(MAGIC);
    body.extend_from_slice(&VERSION.to_le_bytes());
    body.extend_from_slice(&(json.len() as u32).to_le_bytes());
    body.extend_from_slice(&json);
    body.extend_from_slice(&(model.parameter_count() as u64).to_le_bytes());
    for &p in model.params() {
        body.extend_from_slice(&(p as f32).to_le_bytes());
    }
    w.write_all(&body)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// Loads a checkpoint; parameters come back rounded to f32 precision.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ClassifierModel> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(file)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    let bad = |m: &str| Error::parse("checkpoint", format!("{}: {m}", path.display()));
    let take = |at: &mut usize, n: usize| -> Result<&[u8]> {
        let s = bytes.get(*at..*at + n).ok_or_else(|| bad("truncated file"))?;
        *at += n;
        Ok(s)
    };
    let mut at = 0;
    if take(&mut at, 4)? != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = u32::from_le_bytes(take(&mut at, 4)?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let json_len = u32::from_le_bytes(take(&mut at, 4)?.try_into().expect("4 bytes")) as usize;
    let config: ModelConfig =
        serde_json::from_slice(take(&mut at, json_len)?).map_err(|e| bad(&format!("config: {e}")))?;
    let count = u64::from_le_bytes(take(&mut at, 8)?.try_into().expect("8 bytes")) as usize;
    let blob = take(
        &mut at,
        count.checked_mul(4).ok_or_else(|| bad("parameter count overflows"))?,
    )?;
    if at != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    let params = blob
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
        .collect();
    ClassifierModel::from_params(config, params)
}
