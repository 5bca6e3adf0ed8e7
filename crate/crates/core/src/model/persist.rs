//! Model checkpoints with their JSON manifests.
//!
//! `<name>.ckpt` holds the parameters; `<name>.ckpt.json` records the shape
//! needed to rebuild the network plus provenance (vocabulary checksum,
//! featurizer seed, KL weight, plausibility threshold).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Classifier, Vae};
use crate::dataset::io::write_atomic;
use crate::error::{Error, Result};
use crate::nn::Checkpoint;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Classifier,
    Vae,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub format: u32,
    pub kind: ModelKind,
    pub feature_dim: usize,
    pub classes: usize,
    pub hidden: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    pub vocab_checksum: String,
    pub featurizer_seed: u64,
    pub seed: u64,
    #[serde(default)]
    pub checkpoint_checksum: String,
}

pub const MANIFEST_FORMAT: u32 = 1;

fn manifest_path(ckpt: &Path) -> PathBuf {
    let mut s = ckpt.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

impl ModelManifest {
    fn save(&self, ckpt_path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        write_atomic(&manifest_path(ckpt_path), format!("{json}\n").as_bytes())
    }

    pub fn load(ckpt_path: &Path) -> Result<Self> {
        let path = manifest_path(ckpt_path);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: Self = serde_json::from_str(&text).map_err(|e| Error::format(&path, e.line(), e.to_string()))?;
        if m.format != MANIFEST_FORMAT {
            return Err(Error::format(&path, 1, format!("unsupported manifest format {}", m.format)));
        }
        Ok(m)
    }

    fn expect_kind(&self, kind: ModelKind, path: &Path) -> Result<()> {
        if self.kind != kind {
            return Err(Error::format(
                manifest_path(path),
                1,
                format!("expected a {kind:?} manifest, found {:?}", self.kind),
            ));
        }
        Ok(())
    }
}

fn save_pair(ckpt: Checkpoint, mut manifest: ModelManifest, path: &Path) -> Result<ModelManifest> {
    manifest.format = MANIFEST_FORMAT;
    manifest.checkpoint_checksum = ckpt.checksum();
    ckpt.save(path)?;
    manifest.save(path)?;
    Ok(manifest)
}

fn load_checkpoint(path: &Path, manifest: &ModelManifest) -> Result<Checkpoint> {
    let ckpt = Checkpoint::load(path)?;
    if ckpt.checksum() != manifest.checkpoint_checksum {
        return Err(Error::Checksum {
            path: path.to_path_buf(),
            expected: manifest.checkpoint_checksum.clone(),
            found: ckpt.checksum(),
        });
    }
    Ok(ckpt)
}

impl Classifier {
    /// Writes the checkpoint and its manifest; shape fields are filled from the model.
    pub fn save(&self, path: &Path, manifest: ModelManifest) -> Result<ModelManifest> {
        let manifest = ModelManifest {
            kind: ModelKind::Classifier,
            feature_dim: self.feature_dim(),
            classes: self.classes(),
            hidden: self.hidden(),
            ..manifest
        };
        save_pair(self.to_checkpoint()?, manifest, path)
    }

    pub fn load(path: &Path) -> Result<(Self, ModelManifest)> {
        let manifest = ModelManifest::load(path)?;
        manifest.expect_kind(ModelKind::Classifier, path)?;
        let ckpt = load_checkpoint(path, &manifest)?;
        let model = Self::from_checkpoint(&ckpt, manifest.feature_dim, manifest.classes, manifest.hidden)?;
        Ok((model, manifest))
    }
}

impl Vae {
    pub fn save(&self, path: &Path, manifest: ModelManifest) -> Result<ModelManifest> {
        let manifest = ModelManifest {
            kind: ModelKind::Vae,
            feature_dim: self.feature_dim(),
            classes: self.classes(),
            hidden: self.hidden(),
            latent_dim: Some(self.latent_dim()),
            ..manifest
        };
        save_pair(self.to_checkpoint()?, manifest, path)
    }

    pub fn load(path: &Path) -> Result<(Self, ModelManifest)> {
        let manifest = ModelManifest::load(path)?;
        manifest.expect_kind(ModelKind::Vae, path)?;
        let latent = manifest
            .latent_dim
            .ok_or_else(|| Error::format(manifest_path(path), 1, "VAE manifest lacks latent_dim"))?;
        let ckpt = load_checkpoint(path, &manifest)?;
        let model = Self::from_checkpoint(
            &ckpt,
            manifest.feature_dim,
            manifest.classes,
            manifest.hidden,
            latent,
        )?;
        Ok((model, manifest))
    }
}
