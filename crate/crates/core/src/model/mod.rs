//! The two-stage affordance model.
//!
//! Stage one ([`Classifier`]) maps the three crop features around a query
//! point to a distribution over pose classes. Stage two ([`Vae`]) is a
//! conditional VAE over the 36-d scale/deformation vector, conditioned on the
//! crops and a class vector. [`Predictor`] combines both with the pose
//! vocabulary to generate poses at a point or score a candidate pose.

mod classifier;
mod inference;
mod persist;
mod vae;

use serde::{Deserialize, Serialize};

pub use classifier::{train_classifier, Classifier, ClassifierExample, ClassifierGrads};
pub use inference::{ClassConditioning, GeneratedPose, PoseScore, Predictor, MIN_GENERATED_SCALE};
pub use persist::{ModelKind, ModelManifest, MANIFEST_FORMAT};
pub use vae::{train_vae, Standardizer, Vae, VaeExample, VaeGrads, VaeLoss};

use crate::error::{Error, Result};
use crate::nn::AdamConfig;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub hidden: usize,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 64,
            hidden: 512,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub(crate) fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.hidden == 0 {
            return Err(Error::Config("batch size and hidden width must be positive".into()));
        }
        if !(self.adam.lr > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// Per-epoch averages. `accuracy` is set for the classifier, `kl` for the VAE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub reconstruction: Option<f64>,
    pub kl: Option<f64>,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    /// Metrics on the full training set before the first update.
    pub initial: Option<EpochStats>,
    pub epochs: Vec<EpochStats>,
}

/// Deterministic per-epoch visiting order.
pub(crate) fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, 1_000 + epoch as u64));
    order
}
