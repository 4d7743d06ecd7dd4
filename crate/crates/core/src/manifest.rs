//! Run manifests recording inputs, outputs and their content hashes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hashing::file_sha256;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub inputs: Vec<Artifact>,
    pub outputs: Vec<Artifact>,
}

impl RunManifest {
    pub fn new(command: &str, seed: Option<u64>, config: serde_json::Value) -> Self {
        RunManifest {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    fn artifact(path: &Path, label: &str) -> Result<Artifact> {
        Ok(Artifact { path: label.to_string(), sha256: file_sha256(path)? })
    }

    /// Records an input file, or every file of an input directory in name
    /// order.
    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        for (p, label) in expand(path)? {
            self.inputs.push(Self::artifact(&p, &label)?);
        }
        Ok(())
    }

    /// Records an output, labelled relative to `base` when possible.
    pub fn add_output(&mut self, path: &Path, base: &Path) -> Result<()> {
        let label = path.strip_prefix(base).unwrap_or(path).display().to_string();
        self.outputs.push(Self::artifact(path, &label)?);
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

fn expand(path: &Path) -> Result<Vec<(std::path::PathBuf, String)>> {
    if !path.is_dir() {
        return Ok(vec![(path.to_path_buf(), path.display().to_string())]);
    }
    let mut entries: Vec<_> = std::fs::read_dir(path)
        .map_err(|e| Error::io(path, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    entries.sort();
    Ok(entries.into_iter().map(|p| { let l = p.display().to_string(); (p, l) }).collect())
}
