//! Conditional VAE over scale/deformation vectors.
//!
//! ```text
//!   condition trunk (shared):  crop tower x3 (shared weights) ++ class path
//!   encoder:  [trunk, target path(y)]  -> (mu, log_var)
//!   decoder:  [trunk, latent path(z)]  -> y*
//! ```
//!
//! The encoder and decoder read the same trunk parameters. Targets are
//! standardized per dimension before training; the statistics travel with
//! the checkpoint.

use super::{epoch_order, EpochStats, TrainConfig, TrainingLog};
use crate::error::{Error, Result};
use crate::features::{ConditionInput, CropFeatures};
use crate::nn::{
    kl_to_standard_normal, reparameterize, reparameterize_backward, squared_error, Activation,
    AdamState, Checkpoint, DenseGrads, DenseNet, GaussianParams, Trace,
};
use crate::pose::{ScaleDeform, SCALE_DEFORM_DIM};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct VaeExample {
    pub crops: CropFeatures,
    pub class: usize,
    pub target: ScaleDeform,
}

/// Per-dimension affine standardization of 36-d targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Sample mean and population standard deviation; constant dimensions get std 1.
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let first = rows.first().ok_or(Error::EmptyInput("no targets to standardize"))?;
        let dim = first.len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for row in rows {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v / n;
            }
        }
        let mut std = vec![0.0; dim];
        for row in rows {
            for ((s, v), m) in std.iter_mut().zip(row).zip(&mean) {
                *s += (v - m).powi(2) / n;
            }
        }
        for s in &mut std {
            *s = if *s > 1e-16 { s.sqrt() } else { 1.0 };
        }
        Ok(Self { mean, std })
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }

    pub fn invert(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(x, (m, s))| x * s + m)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VaeLoss {
    pub reconstruction: f64,
    pub kl: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VaeGrads {
    pub crop_tower: DenseGrads,
    pub class_path: DenseGrads,
    pub target_path: DenseGrads,
    pub encoder_head: DenseGrads,
    pub latent_path: DenseGrads,
    pub decoder_head: DenseGrads,
}

impl VaeGrads {
    fn parts(&self) -> [&DenseGrads; 6] {
        [
            &self.crop_tower,
            &self.class_path,
            &self.target_path,
            &self.encoder_head,
            &self.latent_path,
            &self.decoder_head,
        ]
    }

    fn parts_mut(&mut self) -> [&mut DenseGrads; 6] {
        [
            &mut self.crop_tower,
            &mut self.class_path,
            &mut self.target_path,
            &mut self.encoder_head,
            &mut self.latent_path,
            &mut self.decoder_head,
        ]
    }

    /// Flat views in [`Vae::params_mut`] order.
    pub fn slices(&self) -> Vec<&[f64]> {
        self.parts().into_iter().flat_map(|g| g.slices()).collect()
    }

    fn add(&mut self, other: &VaeGrads) {
        for (t, s) in self.parts_mut().into_iter().zip(other.parts()) {
            for (tl, sl) in t.layers.iter_mut().zip(&s.layers) {
                tl.weights.iter_mut().zip(&sl.weights).for_each(|(a, b)| *a += b);
                tl.bias.iter_mut().zip(&sl.bias).for_each(|(a, b)| *a += b);
            }
        }
    }

    fn scale(&mut self, f: f64) {
        for g in self.parts_mut() {
            g.scale(f);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vae {
    crop_tower: DenseNet,
    class_path: DenseNet,
    target_path: DenseNet,
    encoder_head: DenseNet,
    latent_path: DenseNet,
    decoder_head: DenseNet,
    standardizer: Standardizer,
    trained: bool,
}

struct TrunkTrace {
    crops: Vec<Trace>,
    class: Trace,
}

impl Vae {
    pub fn new(
        feature_dim: usize,
        classes: usize,
        hidden: usize,
        latent_dim: usize,
        seed: u64,
    ) -> Self {
        let mut r = rng::stream(seed, 0);
        let relu = Activation::Relu;
        let id = Activation::Identity;
        let trunk_width = 4 * hidden;
        Self {
            crop_tower: DenseNet::new(&[feature_dim, hidden], relu, relu, &mut r),
            class_path: DenseNet::new(&[classes, hidden, hidden], relu, relu, &mut r),
            target_path: DenseNet::new(&[SCALE_DEFORM_DIM, hidden, hidden], relu, relu, &mut r),
            encoder_head: DenseNet::new(&[trunk_width + hidden, 2 * latent_dim], id, id, &mut r),
            latent_path: DenseNet::new(&[latent_dim, hidden, hidden], relu, relu, &mut r),
            decoder_head: DenseNet::new(&[trunk_width + hidden, SCALE_DEFORM_DIM], id, id, &mut r),
            standardizer: Standardizer::identity(SCALE_DEFORM_DIM),
            trained: false,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.crop_tower.in_dim()
    }

    pub fn classes(&self) -> usize {
        self.class_path.in_dim()
    }

    pub fn hidden(&self) -> usize {
        self.crop_tower.out_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_path.in_dim()
    }

    pub fn standardizer(&self) -> &Standardizer {
        &self.standardizer
    }

    pub fn set_standardizer(&mut self, s: Standardizer) -> Result<()> {
        if s.mean.len() != SCALE_DEFORM_DIM || s.std.len() != SCALE_DEFORM_DIM {
            return Err(Error::Shape("standardizer must be 36-dimensional".into()));
        }
        self.standardizer = s;
        Ok(())
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub fn set_trained(&mut self, trained: bool) {
        self.trained = trained;
    }

    pub fn decoder_head_mut(&mut self) -> &mut DenseNet {
        &mut self.decoder_head
    }

    pub fn latent_path_mut(&mut self) -> &mut DenseNet {
        &mut self.latent_path
    }

    /// Condition-trunk parameters, read by both encoder and decoder.
    pub fn trunk_mut(&mut self) -> (&mut DenseNet, &mut DenseNet) {
        (&mut self.crop_tower, &mut self.class_path)
    }

    fn check_condition(&self, cond: &ConditionInput) -> Result<()> {
        cond.crops.validate(self.feature_dim())?;
        if cond.class_vec.len() != self.classes() {
            return Err(Error::Shape(format!(
                "class vector has {} entries, model has {} classes",
                cond.class_vec.len(),
                self.classes()
            )));
        }
        Ok(())
    }

    /// Shared embedding of the conditioning input.
    pub fn condition(&self, cond: &ConditionInput) -> Result<Vec<f64>> {
        Ok(self.condition_traced(cond)?.0)
    }

    fn condition_traced(&self, cond: &ConditionInput) -> Result<(Vec<f64>, TrunkTrace)> {
        self.check_condition(cond)?;
        let mut out = Vec::with_capacity(4 * self.hidden());
        let mut crops = Vec::with_capacity(3);
        for view in cond.crops.views() {
            let (v, t) = self.crop_tower.forward(view)?;
            out.extend(v);
            crops.push(t);
        }
        let (c, class) = self.class_path.forward(&cond.class_vec)?;
        out.extend(c);
        Ok((out, TrunkTrace { crops, class }))
    }

    fn trunk_backward(&self, trace: &TrunkTrace, grad: &[f64], grads: &mut VaeGrads) -> Result<()> {
        let h = self.hidden();
        for (i, t) in trace.crops.iter().enumerate() {
            self.crop_tower
                .backward_into(t, &grad[i * h..(i + 1) * h], &mut grads.crop_tower)?;
        }
        self.class_path
            .backward_into(&trace.class, &grad[3 * h..], &mut grads.class_path)?;
        Ok(())
    }

    /// Posterior parameters for a standardized target.
    pub fn encode(&self, cond: &ConditionInput, target_std: &[f64]) -> Result<GaussianParams> {
        let mut h = self.condition(cond)?;
        h.extend(self.target_path.infer(target_std)?);
        GaussianParams::from_concat(&self.encoder_head.infer(&h)?)
    }

    /// Standardized reconstruction for latent `z`.
    pub fn decode_standardized(&self, cond: &ConditionInput, z: &[f64]) -> Result<Vec<f64>> {
        let mut h = self.condition(cond)?;
        h.extend(self.latent_path.infer(z)?);
        self.decoder_head.infer(&h)
    }

    /// Decoder output mapped back to target units.
    pub fn decode(&self, cond: &ConditionInput, z: &[f64]) -> Result<Vec<f64>> {
        Ok(self.standardizer.invert(&self.decode_standardized(cond, z)?))
    }

    /// Loss for one example with fixed reparameterization noise `alpha`.
    pub fn loss(
        &self,
        cond: &ConditionInput,
        target_std: &[f64],
        alpha: &[f64],
        lambda: f64,
    ) -> Result<VaeLoss> {
        let g = self.encode(cond, target_std)?;
        let z = reparameterize(&g, alpha)?;
        let y = self.decode_standardized(cond, &z)?;
        let reconstruction = squared_error(&y, target_std)?.loss;
        let kl = kl_to_standard_normal(&g).loss;
        Ok(VaeLoss {
            reconstruction,
            kl,
            total: reconstruction + lambda * kl,
        })
    }

    /// Loss and gradients of `||y* - y||^2 + lambda * KL` for one example.
    pub fn loss_and_grads(
        &self,
        cond: &ConditionInput,
        target_std: &[f64],
        alpha: &[f64],
        lambda: f64,
    ) -> Result<(VaeLoss, VaeGrads)> {
        let h = self.hidden();
        let (trunk, trunk_trace) = self.condition_traced(cond)?;

        let (target_emb, target_trace) = self.target_path.forward(target_std)?;
        let mut enc_in = trunk.clone();
        enc_in.extend(target_emb);
        let (enc_out, enc_trace) = self.encoder_head.forward(&enc_in)?;
        let g = GaussianParams::from_concat(&enc_out)?;
        let z = reparameterize(&g, alpha)?;

        let (latent_emb, latent_trace) = self.latent_path.forward(&z)?;
        let mut dec_in = trunk;
        dec_in.extend(latent_emb);
        let (y, dec_trace) = self.decoder_head.forward(&dec_in)?;

        let rec = squared_error(&y, target_std)?;
        let kl = kl_to_standard_normal(&g);
        let loss = VaeLoss {
            reconstruction: rec.loss,
            kl: kl.loss,
            total: rec.loss + lambda * kl.loss,
        };

        let mut grads = self.zero_grads();
        let grad_dec_in = self
            .decoder_head
            .backward_into(&dec_trace, &rec.grad, &mut grads.decoder_head)?;
        let (grad_trunk_dec, grad_latent_emb) = grad_dec_in.split_at(4 * h);
        let grad_z = self
            .latent_path
            .backward_into(&latent_trace, grad_latent_emb, &mut grads.latent_path)?;
        let (mut grad_mu, mut grad_lv) = reparameterize_backward(&g, alpha, &grad_z);
        for (gm, k) in grad_mu.iter_mut().zip(&kl.grad_mu) {
            *gm += lambda * k;
        }
        for (gl, k) in grad_lv.iter_mut().zip(&kl.grad_log_var) {
            *gl += lambda * k;
        }
        grad_mu.extend(grad_lv);
        let grad_enc_in = self
            .encoder_head
            .backward_into(&enc_trace, &grad_mu, &mut grads.encoder_head)?;
        let (grad_trunk_enc, grad_target_emb) = grad_enc_in.split_at(4 * h);
        self.target_path
            .backward_into(&target_trace, grad_target_emb, &mut grads.target_path)?;
        let grad_trunk: Vec<f64> = grad_trunk_dec
            .iter()
            .zip(grad_trunk_enc)
            .map(|(a, b)| a + b)
            .collect();
        self.trunk_backward(&trunk_trace, &grad_trunk, &mut grads)?;
        Ok((loss, grads))
    }

    fn nets(&self) -> [&DenseNet; 6] {
        [
            &self.crop_tower,
            &self.class_path,
            &self.target_path,
            &self.encoder_head,
            &self.latent_path,
            &self.decoder_head,
        ]
    }

    fn zero_grads(&self) -> VaeGrads {
        let [a, b, c, d, e, f] = self.nets().map(|n| n.zero_grads());
        VaeGrads {
            crop_tower: a,
            class_path: b,
            target_path: c,
            encoder_head: d,
            latent_path: e,
            decoder_head: f,
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = Vec::new();
        for net in [
            &mut self.crop_tower,
            &mut self.class_path,
            &mut self.target_path,
            &mut self.encoder_head,
            &mut self.latent_path,
            &mut self.decoder_head,
        ] {
            v.extend(net.params_mut());
        }
        v
    }

    pub fn all_finite(&self) -> bool {
        self.nets().iter().all(|n| n.all_finite())
    }

    const SLOTS: [&'static str; 6] = [
        "vae.trunk.crop",
        "vae.trunk.class",
        "vae.encoder.target",
        "vae.encoder.head",
        "vae.decoder.latent",
        "vae.decoder.head",
    ];

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ckpt = Checkpoint::new();
        for (name, net) in Self::SLOTS.iter().zip(self.nets()) {
            ckpt.push_net(name, net)?;
        }
        ckpt.push("vae.standardizer.mean", vec![SCALE_DEFORM_DIM], self.standardizer.mean.clone())?;
        ckpt.push("vae.standardizer.std", vec![SCALE_DEFORM_DIM], self.standardizer.std.clone())?;
        Ok(ckpt)
    }

    pub fn from_checkpoint(
        ckpt: &Checkpoint,
        feature_dim: usize,
        classes: usize,
        hidden: usize,
        latent_dim: usize,
    ) -> Result<Self> {
        let mut model = Self::new(feature_dim, classes, hidden, latent_dim, 0);
        let Vae {
            crop_tower,
            class_path,
            target_path,
            encoder_head,
            latent_path,
            decoder_head,
            ..
        } = &mut model;
        for (name, net) in Self::SLOTS.iter().zip([
            crop_tower,
            class_path,
            target_path,
            encoder_head,
            latent_path,
            decoder_head,
        ]) {
            ckpt.load_net(name, net)?;
        }
        let slot = |name: &str| -> Result<Vec<f64>> {
            ckpt.get(name)
                .map(|s| s.data.clone())
                .ok_or_else(|| Error::Shape(format!("checkpoint lacks slot {name}")))
        };
        model.set_standardizer(Standardizer {
            mean: slot("vae.standardizer.mean")?,
            std: slot("vae.standardizer.std")?,
        })?;
        model.trained = true;
        Ok(model)
    }
}

/// Trains a fresh conditional VAE. Training conditions on one-hot classes;
/// reparameterization noise for every (epoch, sample) comes from `seed`.
pub fn train_vae(
    examples: &[VaeExample],
    classes: usize,
    latent_dim: usize,
    lambda: f64,
    config: &TrainConfig,
    seed: u64,
) -> Result<(Vae, TrainingLog)> {
    config.validate()?;
    if !(lambda >= 0.0) {
        return Err(Error::Config(format!("KL weight must be non-negative, got {lambda}")));
    }
    if latent_dim == 0 {
        return Err(Error::Config("latent dimension must be positive".into()));
    }
    let first = examples.first().ok_or(Error::EmptyInput("no training examples"))?;
    let targets: Vec<Vec<f64>> = examples.iter().map(|e| e.target.to_vec()).collect();
    let standardizer = Standardizer::fit(&targets)?;
    let conds = examples
        .iter()
        .map(|e| ConditionInput::one_hot(e.crops.clone(), e.class, classes))
        .collect::<Result<Vec<_>>>()?;
    let targets_std: Vec<Vec<f64>> = targets.iter().map(|t| standardizer.apply(t)).collect();

    let mut model = Vae::new(first.crops.dim(), classes, config.hidden, latent_dim, seed);
    model.standardizer = standardizer;
    let mut adam = AdamState::new(config.adam);
    let mut log = TrainingLog::default();

    let noise = |epoch: usize, i: usize| {
        rng::standard_normal(
            &mut rng::stream(seed, ((epoch as u64) << 32) | i as u64),
            latent_dim,
        )
    };
    let stats = |epoch: usize, rec: f64, kl: f64| EpochStats {
        epoch,
        loss: rec + lambda * kl,
        reconstruction: Some(rec),
        kl: Some(kl),
        accuracy: None,
    };

    let n = examples.len() as f64;
    let (mut rec0, mut kl0) = (0.0, 0.0);
    for (i, (c, t)) in conds.iter().zip(&targets_std).enumerate() {
        let l = model.loss(c, t, &noise(0, i), lambda)?;
        rec0 += l.reconstruction / n;
        kl0 += l.kl / n;
    }
    log.initial = Some(stats(0, rec0, kl0));

    for epoch in 1..=config.epochs {
        let (mut rec, mut kl) = (0.0, 0.0);
        for batch in epoch_order(examples.len(), seed, epoch).chunks(config.batch_size) {
            let mut total: Option<VaeGrads> = None;
            for &i in batch {
                let (l, g) = model.loss_and_grads(&conds[i], &targets_std[i], &noise(epoch, i), lambda)?;
                if !l.total.is_finite() {
                    return Err(Error::TrainingDiverged { epoch, what: "loss" });
                }
                rec += l.reconstruction / n;
                kl += l.kl / n;
                match &mut total {
                    None => total = Some(g),
                    Some(t) => t.add(&g),
                }
            }
            let mut grads = total.expect("non-empty batch");
            grads.scale(1.0 / batch.len() as f64);
            adam.step(model.params_mut(), grads.slices())?;
            if !model.all_finite() {
                return Err(Error::TrainingDiverged { epoch, what: "parameter" });
            }
        }
        log.epochs.push(stats(epoch, rec, kl));
    }
    model.trained = true;
    Ok((model, log))
}
