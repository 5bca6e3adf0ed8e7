//! Run manifests written next to every artifact.
//!
//! A manifest holds the command, the full config snapshot, and sha256 digests
//! of each input and output. It carries no timestamps, so re-running a
//! command with the same inputs reproduces it byte for byte.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use affordance::dataset::io::write_atomic;
use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::Resolved;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config: serde_json::Value,
    /// Extra command arguments that are not config fields.
    pub args: BTreeMap<String, String>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn manifest_path(artifact: &Path) -> PathBuf {
    let mut s = artifact.as_os_str().to_owned();
    s.push(".run.json");
    PathBuf::from(s)
}

pub struct RunRecorder<'a> {
    resolved: &'a Resolved,
    manifest: RunManifest,
}

impl<'a> RunRecorder<'a> {
    pub fn new(command: &str, resolved: &'a Resolved) -> Self {
        Self {
            resolved,
            manifest: RunManifest {
                command: command.to_owned(),
                version: env!("CARGO_PKG_VERSION").to_owned(),
                config: serde_json::to_value(&resolved.config).expect("config serializes"),
                args: BTreeMap::new(),
                inputs: BTreeMap::new(),
                outputs: BTreeMap::new(),
            },
        }
    }

    fn key(&self, path: &Path) -> String {
        let rel = path.strip_prefix(&self.resolved.root).unwrap_or(path);
        rel.components()
            .map(|c| c.as_os_str().to_string_lossy().into_owned())
            .collect::<Vec<_>>()
            .join("/")
    }

    pub fn arg(&mut self, name: &str, value: impl ToString) {
        self.manifest.args.insert(name.to_owned(), value.to_string());
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let digest = sha256_file(path)?;
        self.manifest.inputs.insert(self.key(path), digest);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<()> {
        let digest = sha256_file(path)?;
        self.manifest.outputs.insert(self.key(path), digest);
        Ok(())
    }

    /// Writes the manifest next to `artifact`.
    pub fn finish(self, artifact: &Path) -> Result<RunManifest> {
        let json = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        write_atomic(&manifest_path(artifact), format!("{json}\n").as_bytes())?;
        Ok(self.manifest)
    }
}
