use serde::{Deserialize, Serialize};

use super::classifier::argmax;
use super::{Classifier, Vae};
use crate::clustering::PoseVocabulary;
use crate::error::{Error, Result};
use crate::features::{ConditionInput, CropFeatures};
use crate::pose::{decode, Point, Pose, ScaleDeform};
use crate::rng;

/// Floor applied to sampled scales so every generated pose has positive extent.
pub const MIN_GENERATED_SCALE: f64 = 1.0;

/// Which class vector conditions the decoder at inference time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassConditioning {
    /// Full classifier probability vector.
    #[default]
    Soft,
    /// One-hot vector of the arg-max class.
    ArgmaxOneHot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedPose {
    pub pose: Pose,
    pub class: usize,
    pub scale_deform: ScaleDeform,
    pub z: Vec<f64>,
    pub class_scores: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseScore {
    /// Mean euclidean distance between the candidate and `m` generated poses.
    pub distance: f64,
    pub plausible: bool,
}

/// Frozen classifier + VAE + vocabulary. Shared references only, so a
/// predictor can serve many threads at once.
#[derive(Debug, Clone, Copy)]
pub struct Predictor<'a> {
    classifier: &'a Classifier,
    vae: &'a Vae,
    vocab: &'a PoseVocabulary,
    pub conditioning: ClassConditioning,
}

const GENERATE_STREAM: u64 = 0x6E4E;

impl<'a> Predictor<'a> {
    pub fn new(classifier: &'a Classifier, vae: &'a Vae, vocab: &'a PoseVocabulary) -> Result<Self> {
        if !classifier.is_trained() || !vae.is_trained() {
            return Err(Error::State("models must be trained or loaded before inference".into()));
        }
        if classifier.classes() != vocab.len() || vae.classes() != vocab.len() {
            return Err(Error::Shape(format!(
                "classifier has {} classes, VAE {}, vocabulary {}",
                classifier.classes(),
                vae.classes(),
                vocab.len()
            )));
        }
        if classifier.feature_dim() != vae.feature_dim() {
            return Err(Error::Shape("classifier and VAE disagree on feature width".into()));
        }
        Ok(Self {
            classifier,
            vae,
            vocab,
            conditioning: ClassConditioning::default(),
        })
    }

    pub fn with_conditioning(mut self, conditioning: ClassConditioning) -> Self {
        self.conditioning = conditioning;
        self
    }

    pub fn classify(&self, crops: &CropFeatures) -> Result<Vec<f64>> {
        self.classifier.classify(crops)
    }

    /// Draws `n_samples` poses at `anchor`. The class is the classifier's
    /// arg-max and is shared by every sample; only the latent draw differs.
    pub fn generate_pose(
        &self,
        crops: &CropFeatures,
        anchor: Point,
        n_samples: usize,
        seed: u64,
    ) -> Result<Vec<GeneratedPose>> {
        let scores = self.classifier.classify(crops)?;
        let class = argmax(&scores);
        let class_vec = match self.conditioning {
            ClassConditioning::Soft => scores.clone(),
            ClassConditioning::ArgmaxOneHot => {
                let mut v = vec![0.0; scores.len()];
                v[class] = 1.0;
                v
            }
        };
        let cond = ConditionInput {
            crops: crops.clone(),
            class_vec,
        };
        let center = self
            .vocab
            .center(class)
            .ok_or_else(|| Error::State(format!("class {class} missing from vocabulary")))?;
        let mut r = rng::stream(seed, GENERATE_STREAM);
        (0..n_samples)
            .map(|_| {
                let z = rng::standard_normal(&mut r, self.vae.latent_dim());
                let mut y = self.vae.decode(&cond, &z)?;
                y[0] = y[0].max(MIN_GENERATED_SCALE);
                y[1] = y[1].max(MIN_GENERATED_SCALE);
                let scale_deform = ScaleDeform::from_slice(&y)?;
                let pose = decode(&scale_deform, center, anchor)?;
                Ok(GeneratedPose {
                    pose,
                    class,
                    scale_deform,
                    z,
                    class_scores: scores.clone(),
                })
            })
            .collect()
    }

    /// Average distance from `candidate` to `m` poses generated at `anchor`;
    /// plausible when that average is below `delta`.
    pub fn score_pose(
        &self,
        crops: &CropFeatures,
        anchor: Point,
        candidate: &Pose,
        m: usize,
        delta: f64,
        seed: u64,
    ) -> Result<PoseScore> {
        if m == 0 {
            return Err(Error::Config("m must be at least 1".into()));
        }
        if candidate.joints().iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidPose("candidate has non-finite joints".into()));
        }
        let generated = self.generate_pose(crops, anchor, m, seed)?;
        let distance = generated
            .iter()
            .map(|g| g.pose.euclidean_distance(candidate))
            .sum::<f64>()
            / m as f64;
        Ok(PoseScore {
            distance,
            plausible: distance < delta,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Standardizer;
    use crate::pose::{normalize, JOINT_COUNT};

    fn vocab() -> PoseVocabulary {
        let mk = |lean: f64| {
            let joints = (0..JOINT_COUNT)
                .map(|i| Point::new(lean * i as f64 + (i % 3) as f64, i as f64 * 2.0))
                .collect();
            normalize(&Pose::new(joints).unwrap()).unwrap()
        };
        PoseVocabulary::new(vec![mk(0.0), mk(0.5), mk(-0.7)], vec![0, 1, 2]).unwrap()
    }

    fn crops(seed: u64) -> CropFeatures {
        let mut r = rng::seeded(seed);
        CropFeatures {
            full: rng::standard_normal(&mut r, 4),
            half: rng::standard_normal(&mut r, 4),
            whole: rng::standard_normal(&mut r, 4),
        }
    }

    fn models() -> (Classifier, Vae) {
        let mut c = Classifier::new(4, 3, 8, 1);
        c.set_trained(true);
        let mut v = Vae::new(4, 3, 8, 5, 2);
        v.set_standardizer(Standardizer {
            mean: {
                let mut m = vec![0.0; 36];
                m[0] = 100.0;
                m[1] = 50.0;
                m
            },
            std: vec![3.0; 36],
        })
        .unwrap();
        v.set_trained(true);
        (c, v)
    }

    #[test]
    fn untrained_models_are_refused() {
        let (c, _) = models();
        let v = Vae::new(4, 3, 8, 5, 2);
        assert!(matches!(Predictor::new(&c, &v, &vocab()), Err(Error::State(_))));
    }

    #[test]
    fn seeds_vary_the_pose_but_not_the_class() {
        let (c, v) = models();
        let vocab = vocab();
        let p = Predictor::new(&c, &v, &vocab).unwrap();
        let a = p.generate_pose(&crops(0), Point::new(50.0, 60.0), 3, 1).unwrap();
        let b = p.generate_pose(&crops(0), Point::new(50.0, 60.0), 3, 2).unwrap();
        assert_eq!(a.len(), 3);
        assert_eq!(a[0].class, b[0].class);
        assert_ne!(a[0].pose, b[0].pose);
        assert_eq!(a, p.generate_pose(&crops(0), Point::new(50.0, 60.0), 3, 1).unwrap());
        for g in &a {
            let center = vocab.center(g.class).unwrap();
            assert_eq!(g.pose, decode(&g.scale_deform, center, Point::new(50.0, 60.0)).unwrap());
        }
    }

    #[test]
    fn zero_decoder_places_unit_scaled_center() {
        let (c, mut v) = models();
        for layer in v.decoder_head_mut().layers_mut() {
            layer.weights_mut().fill(0.0);
            layer.bias_mut().fill(0.0);
        }
        let mut mean = vec![0.0; 36];
        mean[0] = 1.0;
        mean[1] = 1.0;
        v.set_standardizer(Standardizer { mean, std: vec![1.0; 36] }).unwrap();
        let vocab = vocab();
        let p = Predictor::new(&c, &v, &vocab).unwrap();
        let anchor = Point::new(10.0, 20.0);
        let g = &p.generate_pose(&crops(3), anchor, 1, 0).unwrap()[0];
        let center = vocab.center(g.class).unwrap();
        let cc = center.bbox().center();
        for (q, c) in g.pose.joints().iter().zip(center.joints()) {
            assert!((q.x - (anchor.x + c.x - cc.x)).abs() < 1e-12);
            assert!((q.y - (anchor.y + c.y - cc.y)).abs() < 1e-12);
        }
    }

    #[test]
    fn deterministic_decoder_scores_zero_and_far_candidates_fail() {
        let (c, mut v) = models();
        for layer in v.latent_path_mut().layers_mut() {
            layer.weights_mut().fill(0.0);
        }
        let vocab = vocab();
        let p = Predictor::new(&c, &v, &vocab).unwrap();
        let anchor = Point::new(200.0, 150.0);
        let f = crops(4);
        let candidate = p.generate_pose(&f, anchor, 1, 99).unwrap().remove(0).pose;
        let s = p.score_pose(&f, anchor, &candidate, 10, 1e-9, 5).unwrap();
        assert!(s.distance < 1e-9);
        assert!(s.plausible);
        let far = candidate.translated(1e6, 0.0);
        let s = p.score_pose(&f, anchor, &far, 10, 1e5, 5).unwrap();
        assert!(s.distance > 1e5 && !s.plausible);
        assert!(p.score_pose(&f, anchor, &candidate, 0, 1.0, 5).is_err());
    }

    #[test]
    fn argmax_conditioning_uses_one_hot() {
        let (c, v) = models();
        let vocab = vocab();
        let soft = Predictor::new(&c, &v, &vocab).unwrap();
        let hard = soft.with_conditioning(ClassConditioning::ArgmaxOneHot);
        let a = soft.generate_pose(&crops(5), Point::new(30.0, 30.0), 1, 0).unwrap();
        let b = hard.generate_pose(&crops(5), Point::new(30.0, 30.0), 1, 0).unwrap();
        assert_eq!(a[0].class, b[0].class);
        assert_eq!(a[0].z, b[0].z);
        assert_ne!(a[0].scale_deform, b[0].scale_deform);
    }
}
