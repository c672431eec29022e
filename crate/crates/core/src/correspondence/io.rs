//! Plain-text index files: one `a b` pair per line, `#` starts a comment.
//! Correspondence maps add a score column and a `# targets N` header.

use std::path::Path;

use super::CorrespondenceMap;
use crate::error::{Error, Result};

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty())
}

pub fn read_index_pairs(path: impl AsRef<Path>) -> Result<Vec<(usize, usize)>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    data_lines(&text)
        .map(|(n, l)| {
            let f: Vec<&str> = l.split_whitespace().collect();
            let parse = |s: &str| {
                s.parse::<usize>()
                    .map_err(|e| Error::parse("index pairs", format!("line {n}: {e}")))
            };
            match f.as_slice() {
                [a, b] => Ok((parse(a)?, parse(b)?)),
                _ => Err(Error::parse("index pairs", format!("line {n}: expected two columns"))),
            }
        })
        .collect()
}

pub fn write_index_pairs(pairs: &[(usize, usize)], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text: String = pairs.iter().map(|(a, b)| format!("{a} {b}\n")).collect();
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_correspondence_map(map: &CorrespondenceMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = format!("# targets {}\n", map.target_count);
    for (i, (t, s)) in map.targets.iter().zip(&map.scores).enumerate() {
        text.push_str(&format!("{i} {t} {s}\n"));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads a map written by [`write_correspondence_map`]; sources must be
/// `0..n` in order. Without a `# targets` header the target count is one
/// past the largest index.
pub fn read_correspondence_map(path: impl AsRef<Path>) -> Result<CorrespondenceMap> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let declared = text.lines().find_map(|l| {
        l.trim()
            .strip_prefix("# targets")
            .and_then(|r| r.trim().parse::<usize>().ok())
    });
    let mut targets = Vec::new();
    let mut scores = Vec::new();
    for (n, l) in data_lines(&text) {
        let f: Vec<&str> = l.split_whitespace().collect();
        let bad = |m: String| Error::parse("correspondence map", format!("line {n}: {m}"));
        if f.len() != 2 && f.len() != 3 {
            return Err(bad("expected `source target [score]`".into()));
        }
        let src: usize = f[0].parse().map_err(|e| bad(format!("{e}")))?;
        if src != targets.len() {
            return Err(bad(format!("expected source {}, found {src}", targets.len())));
        }
        targets.push(f[1].parse::<usize>().map_err(|e| bad(format!("{e}")))?);
        scores.push(match f.get(2) {
            Some(s) => s.parse::<f64>().map_err(|e| bad(format!("{e}")))?,
            None => 0.0,
        });
    }
    let count = declared.unwrap_or_else(|| targets.iter().max().map_or(0, |m| m + 1));
    CorrespondenceMap::new(targets, scores, count)
}
