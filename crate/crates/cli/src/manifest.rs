//! Per-run manifest: the resolved argument vector, seeds, thread count,
//! tool version, and content hashes of every input and output file.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct FileRecord {
    pub path: PathBuf,
    pub bytes: u64,
    pub sha256: String,
}

impl FileRecord {
    pub fn of(path: &Path) -> Result<Self> {
        let file = File::open(path).with_context(|| format!("hashing {}", path.display()))?;
        let bytes = file.metadata()?.len();
        let mut reader = BufReader::new(file);
        let mut hasher = Sha256::new();
        let mut buf = [0u8; 1 << 16];
        loop {
            let n = reader.read(&mut buf)?;
            if n == 0 {
                break;
            }
            hasher.update(&buf[..n]);
        }
        Ok(Self {
            path: path.to_path_buf(),
            bytes,
            sha256: format!("{:x}", hasher.finalize()),
        })
    }
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    /// Arguments after config merging; `vmark <argv…>` replays the run.
    pub argv: Vec<String>,
    pub threads: usize,
    pub seed: Option<u64>,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
    pub elapsed_ms: f64,
    pub dry_run: bool,
    /// Stage-specific results (losses, error summaries, counts).
    pub summary: serde_json::Value,
}

/// Hashes each existing file; directories contribute their files, sorted.
pub fn records(paths: &[PathBuf]) -> Result<Vec<FileRecord>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut entries: Vec<PathBuf> = std::fs::read_dir(p)?
                .map(|e| e.map(|e| e.path()))
                .collect::<std::io::Result<_>>()?;
            entries.retain(|e| e.is_file() && e.file_name().is_some_and(|n| n != "manifest.json"));
            entries.sort();
            for e in entries {
                out.push(FileRecord::of(&e)?);
            }
        } else if p.is_file() {
            out.push(FileRecord::of(p)?);
        }
    }
    Ok(out)
}

/// `<dir>/manifest.json` for directory outputs, `<file>.manifest.json` otherwise.
pub fn path_for(primary: &Path) -> PathBuf {
    if primary.is_dir() {
        primary.join("manifest.json")
    } else {
        let mut s = primary.as_os_str().to_owned();
        s.push(".manifest.json");
        PathBuf::from(s)
    }
}
