//! Pipeline configuration.
//!
//! Values are layered: built-in defaults, then the TOML file, then
//! `AFFORD_<SECTION>_<FIELD>` environment variables, then `--set
//! section.field=value` flags, then command-specific flags.

use std::path::{Path, PathBuf};

use affordance::mining::{MiningConfig, Thresholds};
use affordance::model::{ClassConditioning, TrainConfig};
use affordance::nn::AdamConfig;
use affordance::dataset::DEFAULT_NEGATIVE_RATIO;
use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

pub const ENV_PREFIX: &str = "AFFORD_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub paths: Paths,
    pub model: ModelConfig,
    pub train: TrainSection,
    pub seeds: Seeds,
    pub mining: MiningSection,
    pub eval: EvalSection,
}

/// Artifact locations, relative to the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub corpus: PathBuf,
    pub dataset: PathBuf,
    pub vocab: PathBuf,
    pub classifier: PathBuf,
    pub vae: PathBuf,
    pub report: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Vocabulary size.
    pub k: usize,
    /// Featurizer output width per crop.
    pub feature_dim: usize,
    pub hidden: usize,
    pub latent_dim: usize,
    pub lambda: f64,
    /// Fixed plausibility threshold; when unset it is calibrated by `train-vae`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    /// Generated poses averaged by `score`.
    pub m: usize,
    pub conditioning: ClassConditioning,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub classifier_epochs: usize,
    pub vae_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Share of training positives held out to calibrate delta.
    pub val_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub corpus: u64,
    pub featurizer: u64,
    pub cluster: u64,
    pub classifier: u64,
    pub vae: u64,
    pub split: u64,
    pub negatives: u64,
    pub generate: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MiningSection {
    pub tau_face: f64,
    pub tau_person: f64,
    pub tau_empty: f64,
    pub window_seconds: f64,
    pub global_top_k: usize,
    pub global_min_similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub test_show: String,
    pub negative_ratio: f64,
    pub k_max: usize,
}

impl Default for Config {
    fn default() -> Self {
        let adam = AdamConfig::default();
        let mining = MiningConfig::default();
        Self {
            paths: Paths {
                corpus: "corpus/corpus.json".into(),
                dataset: "data/dataset.afd".into(),
                vocab: "models/vocab.txt".into(),
                classifier: "models/classifier.ckpt".into(),
                vae: "models/vae.ckpt".into(),
                report: "report".into(),
            },
            model: ModelConfig {
                k: 30,
                feature_dim: 64,
                hidden: 512,
                latent_dim: 30,
                lambda: 1.0,
                delta: None,
                m: 10,
                conditioning: ClassConditioning::Soft,
            },
            train: TrainSection {
                classifier_epochs: 50,
                vae_epochs: 200,
                batch_size: 64,
                lr: adam.lr,
                beta1: adam.beta1,
                beta2: adam.beta2,
                eps: adam.epsilon,
                val_fraction: 0.2,
            },
            seeds: Seeds {
                corpus: 0,
                featurizer: 0,
                cluster: 7,
                classifier: 1,
                vae: 2,
                split: 3,
                negatives: 4,
                generate: 5,
            },
            mining: MiningSection {
                tau_face: mining.thresholds.face,
                tau_person: mining.thresholds.person,
                tau_empty: mining.thresholds.empty,
                window_seconds: mining.window_seconds,
                global_top_k: mining.global_top_k,
                global_min_similarity: mining.global_min_similarity,
            },
            eval: EvalSection {
                test_show: "friends".into(),
                negative_ratio: DEFAULT_NEGATIVE_RATIO,
                k_max: 5,
            },
        }
    }
}

impl Config {
    /// Small models and short schedules sized for the synthetic corpus.
    pub fn desk_scale() -> Self {
        let mut c = Self::default();
        c.model.k = 8;
        c.model.feature_dim = 32;
        c.model.hidden = 48;
        c.model.latent_dim = 8;
        c.train.classifier_epochs = 40;
        c.train.vae_epochs = 60;
        c.train.batch_size = 16;
        c.train.lr = 1e-3;
        c
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        if m.k == 0 {
            bail!("model.k must be at least 1");
        }
        if m.m == 0 {
            bail!("model.m must be at least 1");
        }
        if !(m.lambda >= 0.0) {
            bail!("model.lambda must be non-negative");
        }
        if m.feature_dim == 0 || m.hidden == 0 || m.latent_dim == 0 {
            bail!("model widths must be positive");
        }
        if let Some(d) = m.delta {
            if !(d > 0.0) {
                bail!("model.delta must be positive");
            }
        }
        let t = &self.train;
        if t.batch_size == 0 || !(t.lr > 0.0) {
            bail!("train.batch_size and train.lr must be positive");
        }
        if !(0.0..1.0).contains(&t.beta1) || !(0.0..1.0).contains(&t.beta2) || !(t.eps > 0.0) {
            bail!("Adam betas must lie in [0, 1) and eps must be positive");
        }
        if !(0.0..1.0).contains(&t.val_fraction) {
            bail!("train.val_fraction must lie in [0, 1)");
        }
        if !(self.eval.negative_ratio >= 0.0) || self.eval.k_max == 0 {
            bail!("eval.negative_ratio must be non-negative and eval.k_max positive");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.train.lr,
            beta1: self.train.beta1,
            beta2: self.train.beta2,
            epsilon: self.train.eps,
        }
    }

    pub fn train_config(&self, epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: self.train.batch_size,
            hidden: self.model.hidden,
            adam: self.adam(),
        }
    }

    pub fn mining_config(&self) -> MiningConfig {
        let m = &self.mining;
        MiningConfig {
            thresholds: Thresholds {
                face: m.tau_face,
                person: m.tau_person,
                empty: m.tau_empty,
            },
            window_seconds: m.window_seconds,
            global_top_k: m.global_top_k,
            global_min_similarity: m.global_min_similarity,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// A config together with the directory its relative paths resolve against.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: Config,
    pub root: PathBuf,
}

impl Resolved {
    pub fn path(&self, p: &Path) -> PathBuf {
        self.root.join(p)
    }
}

/// Builds the layered config. `env` yields `(name, value)` pairs.
pub fn load(
    file: Option<&Path>,
    env: impl IntoIterator<Item = (String, String)>,
    sets: &[String],
) -> Result<Resolved> {
    let mut value = toml::Table::try_from(Config::default()).expect("defaults serialize");
    let root = match file {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            let table: toml::Table = text.parse().with_context(|| format!("parsing config {}", path.display()))?;
            merge(&mut value, table, "")?;
            path.parent().map(Path::to_path_buf).unwrap_or_default()
        }
        None => PathBuf::new(),
    };
    let root = if root.as_os_str().is_empty() { PathBuf::from(".") } else { root };

    let mut env: Vec<(String, String)> = env
        .into_iter()
        .filter(|(k, _)| k.starts_with(ENV_PREFIX) && k != "AFFORD_CONFIG")
        .collect();
    env.sort();
    for (name, raw) in env {
        let key = env_key(&value, &name).with_context(|| format!("unknown config variable {name}"))?;
        set(&mut value, &key, &raw).with_context(|| format!("in {name}"))?;
    }
    for s in sets {
        let (key, raw) = s.split_once('=').with_context(|| format!("--set expects section.field=value, got {s:?}"))?;
        set(&mut value, key.trim(), raw.trim()).with_context(|| format!("in --set {s}"))?;
    }
    let config: Config = value.try_into().context("invalid configuration")?;
    Ok(Resolved { config, root })
}

fn merge(base: &mut toml::Table, over: toml::Table, prefix: &str) -> Result<()> {
    for (k, v) in over {
        let name = format!("{prefix}{k}");
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o, &format!("{name}."))?,
            (Some(toml::Value::Table(_)), _) => bail!("config key {name} must be a table"),
            (_, v) => {
                if prefix.is_empty() {
                    bail!("unknown config section {name}");
                }
                base.insert(k, v);
            }
        }
    }
    Ok(())
}

/// Maps `AFFORD_MODEL_LATENT_DIM` to `model.latent_dim`.
fn env_key(value: &toml::Table, name: &str) -> Option<String> {
    let rest = name.strip_prefix(ENV_PREFIX)?.to_ascii_lowercase();
    value.iter().find_map(|(section, v)| {
        let field = rest.strip_prefix(&format!("{section}_"))?;
        let table = v.as_table()?;
        (table.contains_key(field) || section == "model" && field == "delta").then(|| format!("{section}.{field}"))
    })
}

fn set(value: &mut toml::Table, key: &str, raw: &str) -> Result<()> {
    let (section, field) = key.split_once('.').with_context(|| format!("key {key:?} needs a section"))?;
    let table = value
        .get_mut(section)
        .and_then(toml::Value::as_table_mut)
        .with_context(|| format!("unknown config section {section}"))?;
    let parsed = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_owned()));
    table.insert(field.to_owned(), parsed);
    Ok(())
}
