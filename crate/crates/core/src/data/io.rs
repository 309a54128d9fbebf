//! JSON-lines dataset files.
//!
//! One scene per line with the fields, in order: `id`, `k`, `region_dim`,
//! `regions` (k rows of region_dim numbers), `tag_dim`, `tags`,
//! `caption_count`, `captions` (lists of token ids). Unknown fields and
//! trailing content are rejected.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::vocab::{BOS, EOS};
use super::SceneExample;
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    k: usize,
    region_dim: usize,
    regions: Vec<Vec<f64>>,
    tag_dim: usize,
    tags: Vec<f64>,
    caption_count: usize,
    captions: Vec<Vec<usize>>,
}

pub fn save_dataset(examples: &[SceneExample], path: &Path) -> Result<()> {
    let mut out = String::new();
    for ex in examples {
        let rec = Record {
            id: ex.id.clone(),
            k: ex.k(),
            region_dim: ex.region_dim(),
            regions: ex.regions.clone(),
            tag_dim: ex.tags.len(),
            tags: ex.tags.clone(),
            caption_count: ex.captions.len(),
            captions: ex.captions.clone(),
        };
        out.push_str(&serde_json::to_string(&rec).map_err(|e| Error::contract(e.to_string()))?);
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

pub fn load_dataset(path: &Path) -> Result<Vec<SceneExample>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    let mut dims: Option<(usize, usize)> = None;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            msg: e.to_string(),
        })?;
        let schema = |msg: String| Error::Schema {
            path: path.to_path_buf(),
            line: line_no,
            msg,
        };
        check_record(&rec).map_err(schema)?;
        match dims {
            None => dims = Some((rec.region_dim, rec.tag_dim)),
            Some(d) if d != (rec.region_dim, rec.tag_dim) => {
                return Err(schema(format!(
                    "dims (region {}, tag {}) differ from earlier records {d:?}",
                    rec.region_dim, rec.tag_dim
                )))
            }
            Some(_) => {}
        }
        out.push(SceneExample {
            id: rec.id,
            regions: rec.regions,
            tags: rec.tags,
            captions: rec.captions,
        });
    }
    if out.is_empty() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: "no records".into(),
        });
    }
    Ok(out)
}

fn check_record(r: &Record) -> std::result::Result<(), String> {
    if r.k == 0 || r.regions.len() != r.k {
        return Err(format!("k = {} but {} regions", r.k, r.regions.len()));
    }
    if r.region_dim == 0 {
        return Err("region_dim must be positive".into());
    }
    if let Some(row) = r.regions.iter().position(|v| v.len() != r.region_dim) {
        return Err(format!("region {row} has {} values, expected {}", r.regions[row].len(), r.region_dim));
    }
    if r.regions.iter().flatten().any(|v| !v.is_finite()) {
        return Err("non-finite region value".into());
    }
    if r.tags.len() != r.tag_dim {
        return Err(format!("tag_dim = {} but {} tags", r.tag_dim, r.tags.len()));
    }
    if let Some(t) = r.tags.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(format!("tag value {t} outside [0, 1]"));
    }
    if r.caption_count == 0 || r.captions.len() != r.caption_count {
        return Err(format!("caption_count = {} but {} captions", r.caption_count, r.captions.len()));
    }
    for c in &r.captions {
        if c.len() < 2 || c[0] != BOS || c[c.len() - 1] != EOS {
            return Err(format!("caption {c:?} must start with BOS and end with EOS"));
        }
    }
    Ok(())
}

/// Checks every caption token against a vocabulary size.
pub fn validate_tokens(examples: &[SceneExample], vocab_size: usize) -> Result<()> {
    for ex in examples {
        if let Some(&t) = ex.captions.iter().flatten().find(|&&t| t >= vocab_size) {
            return Err(Error::contract(format!(
                "scene {}: token id {t} outside vocabulary of {vocab_size}",
                ex.id
            )));
        }
    }
    Ok(())
}
