//! Run manifests: one JSON object per line in `runs.manifest`.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const FILE_NAME: &str = "runs.manifest";

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn unix_seconds() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub flags: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub version: String,
    pub started: f64,
    pub finished: f64,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    /// Files written alongside the outputs whose content includes timings.
    pub logs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, flags: serde_json::Value) -> Self {
        Self {
            command: command.to_owned(),
            flags,
            seeds: BTreeMap::new(),
            version: concat!("geogan-v", env!("CARGO_PKG_VERSION")).to_owned(),
            started: unix_seconds(),
            finished: 0.0,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            logs: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs
            .insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<()> {
        self.outputs
            .insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    /// Appends this manifest to `dir/runs.manifest`.
    pub fn append(mut self, dir: &Path) -> Result<PathBuf> {
        self.finished = unix_seconds();
        let path = dir.join(FILE_NAME);
        let line = serde_json::to_string(&self).map_err(|e| Error::Invalid(e.to_string()))?;
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        writeln!(f, "{line}").map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

/// Every manifest recorded in `path`, oldest first.
pub fn read_all(path: &Path) -> Result<Vec<serde_json::Value>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l).map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))
        })
        .collect()
}
