use super::{epoch_order, EpochStats, TrainConfig, TrainingLog};
use crate::error::{Error, Result};
use crate::features::CropFeatures;
use crate::nn::{
    softmax, softmax_cross_entropy, Activation, AdamState, Checkpoint, DenseGrads, DenseNet,
};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierExample {
    pub crops: CropFeatures,
    pub class: usize,
}

/// Pose-class classifier.
///
/// One crop tower (a dense relu layer) is applied to each of the three crop
/// features with the same weights; the three outputs are concatenated and
/// mapped to one logit per class.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    tower: DenseNet,
    head: DenseNet,
    trained: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierGrads {
    pub tower: DenseGrads,
    pub head: DenseGrads,
}

impl ClassifierGrads {
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut v = self.tower.slices();
        v.extend(self.head.slices());
        v
    }

    fn scale(&mut self, f: f64) {
        self.tower.scale(f);
        self.head.scale(f);
    }
}

impl Classifier {
    pub fn new(feature_dim: usize, classes: usize, hidden: usize, seed: u64) -> Self {
        let mut r = rng::stream(seed, 0);
        Self {
            tower: DenseNet::new(&[feature_dim, hidden], Activation::Relu, Activation::Relu, &mut r),
            head: DenseNet::new(&[3 * hidden, classes], Activation::Identity, Activation::Identity, &mut r),
            trained: false,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.tower.in_dim()
    }

    pub fn classes(&self) -> usize {
        self.head.out_dim()
    }

    pub fn hidden(&self) -> usize {
        self.tower.out_dim()
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    /// Marks hand-assembled parameters as ready for inference.
    pub fn set_trained(&mut self, trained: bool) {
        self.trained = trained;
    }

    pub fn tower_mut(&mut self) -> &mut DenseNet {
        &mut self.tower
    }

    pub fn head_mut(&mut self) -> &mut DenseNet {
        &mut self.head
    }

    pub fn logits(&self, crops: &CropFeatures) -> Result<Vec<f64>> {
        crops.validate(self.feature_dim())?;
        let mut joined = Vec::with_capacity(3 * self.hidden());
        for view in crops.views() {
            joined.extend(self.tower.infer(view)?);
        }
        self.head.infer(&joined)
    }

    /// Class probabilities.
    pub fn classify(&self, crops: &CropFeatures) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(crops)?))
    }

    /// Cross-entropy loss, parameter gradients, and whether the argmax was right.
    pub fn loss_and_grads(&self, example: &ClassifierExample) -> Result<(f64, ClassifierGrads, bool)> {
        example.crops.validate(self.feature_dim())?;
        let h = self.hidden();
        let mut joined = Vec::with_capacity(3 * h);
        let mut traces = Vec::with_capacity(3);
        for view in example.crops.views() {
            let (out, trace) = self.tower.forward(view)?;
            joined.extend(out);
            traces.push(trace);
        }
        let (logits, head_trace) = self.head.forward(&joined)?;
        let ce = softmax_cross_entropy(&logits, example.class)?;
        let correct = argmax(&logits) == example.class;

        let mut grads = ClassifierGrads {
            tower: self.tower.zero_grads(),
            head: self.head.zero_grads(),
        };
        let grad_joined = self.head.backward_into(&head_trace, &ce.grad, &mut grads.head)?;
        for (i, trace) in traces.iter().enumerate() {
            self.tower
                .backward_into(trace, &grad_joined[i * h..(i + 1) * h], &mut grads.tower)?;
        }
        Ok((ce.loss, grads, correct))
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.tower.params_mut();
        v.extend(self.head.params_mut());
        v
    }

    pub fn all_finite(&self) -> bool {
        self.tower.all_finite() && self.head.all_finite()
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ckpt = Checkpoint::new();
        ckpt.push_net("classifier.tower", &self.tower)?;
        ckpt.push_net("classifier.head", &self.head)?;
        Ok(ckpt)
    }

    pub fn from_checkpoint(
        ckpt: &Checkpoint,
        feature_dim: usize,
        classes: usize,
        hidden: usize,
    ) -> Result<Self> {
        let mut model = Self::new(feature_dim, classes, hidden, 0);
        ckpt.load_net("classifier.tower", &mut model.tower)?;
        ckpt.load_net("classifier.head", &mut model.head)?;
        model.trained = true;
        Ok(model)
    }
}

/// Index of the largest value, lowest index on ties.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Trains a fresh classifier with softmax cross-entropy and Adam.
pub fn train_classifier(
    examples: &[ClassifierExample],
    classes: usize,
    config: &TrainConfig,
    seed: u64,
) -> Result<(Classifier, TrainingLog)> {
    config.validate()?;
    let first = examples.first().ok_or(Error::EmptyInput("no training examples"))?;
    if let Some(bad) = examples.iter().find(|e| e.class >= classes) {
        return Err(Error::InvalidLabel {
            label: bad.class,
            classes,
        });
    }
    let mut model = Classifier::new(first.crops.dim(), classes, config.hidden, seed);
    let mut adam = AdamState::new(config.adam);
    let mut log = TrainingLog::default();

    let evaluate = |model: &Classifier, epoch: usize| -> Result<EpochStats> {
        let mut loss = 0.0;
        let mut correct = 0usize;
        for ex in examples {
            let logits = model.logits(&ex.crops)?;
            loss += softmax_cross_entropy(&logits, ex.class)?.loss;
            correct += usize::from(argmax(&logits) == ex.class);
        }
        Ok(EpochStats {
            epoch,
            loss: loss / examples.len() as f64,
            reconstruction: None,
            kl: None,
            accuracy: Some(correct as f64 / examples.len() as f64),
        })
    };
    log.initial = Some(evaluate(&model, 0)?);

    for epoch in 1..=config.epochs {
        let order = epoch_order(examples.len(), seed, epoch);
        for batch in order.chunks(config.batch_size) {
            let mut total: Option<ClassifierGrads> = None;
            for &i in batch {
                let (loss, g, _) = model.loss_and_grads(&examples[i])?;
                if !loss.is_finite() {
                    return Err(Error::TrainingDiverged { epoch, what: "loss" });
                }
                match &mut total {
                    None => total = Some(g),
                    Some(t) => add_into(t, &g),
                }
            }
            let mut grads = total.expect("non-empty batch");
            grads.scale(1.0 / batch.len() as f64);
            adam.step(model.params_mut(), grads.slices())?;
            if !model.all_finite() {
                return Err(Error::TrainingDiverged { epoch, what: "parameter" });
            }
        }
        let stats = evaluate(&model, epoch)?;
        if !stats.loss.is_finite() {
            return Err(Error::TrainingDiverged { epoch, what: "loss" });
        }
        log.epochs.push(stats);
    }
    model.trained = true;
    Ok((model, log))
}

fn add_into(total: &mut ClassifierGrads, g: &ClassifierGrads) {
    for (t, s) in [(&mut total.tower, &g.tower), (&mut total.head, &g.head)] {
        for (tl, sl) in t.layers.iter_mut().zip(&s.layers) {
            tl.weights.iter_mut().zip(&sl.weights).for_each(|(a, b)| *a += b);
            tl.bias.iter_mut().zip(&sl.bias).for_each(|(a, b)| *a += b);
        }
    }
}
