//! Content hashes and the `run.json` record written next to every artifact.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const RUN_FILE: &str = "run.json";

fn collect(path: &Path, root: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let meta = fs::metadata(path).map_err(|e| Error::io(path, e))?;
    if meta.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(path, err)))
            .collect::<Result<_>>()?;
        entries.sort();
        for e in entries {
            if e.file_name().is_some_and(|n| n == RUN_FILE) {
                continue;
            }
            collect(&e, root, out)?;
        }
    } else {
        out.push(path.to_path_buf());
    }
    Ok(())
}

/// SHA-256 over the relative paths and bytes of every file under `paths`,
/// visited in sorted order. Existing `run.json` files are skipped.
pub fn hash_inputs(paths: &[&Path]) -> Result<String> {
    let mut h = Sha256::new();
    for root in paths {
        let mut files = Vec::new();
        collect(root, root, &mut files)?;
        for f in files {
            let rel = f.strip_prefix(root).unwrap_or(&f);
            h.update(rel.to_string_lossy().as_bytes());
            h.update([0]);
            let bytes = fs::read(&f).map_err(|e| Error::io(&f, e))?;
            h.update((bytes.len() as u64).to_le_bytes());
            h.update(&bytes);
        }
    }
    Ok(hex::encode(h.finalize()))
}

/// Everything needed to rerun a command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub command: String,
    pub args: Vec<String>,
    pub seed: u64,
    /// Hash of the effective configuration after flag overrides.
    pub config_hash: String,
    pub config: serde_json::Value,
    pub inputs_hash: String,
    pub version: String,
}

impl RunRecord {
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        crate::synthworld::write_json(&dir.join(RUN_FILE), self)
    }
}
