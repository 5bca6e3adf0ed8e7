//! One function per pipeline stage. Each reads its inputs from the paths in
//! the config, writes its artifacts atomically, and leaves a run manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use affordance::clustering::PoseVocabulary;
use affordance::dataset::io::write_atomic;
use affordance::dataset::{
    read_dataset, split_by_show, synthesize_negatives, write_dataset, AffordanceRecord, Dataset, WriteLock,
};
use affordance::eval::{evaluate_pr, select_delta, topk_accuracies, EvalReport};
use affordance::features::SceneImage;
use affordance::mining::{auto_annotate, mine as mine_corpus};
use affordance::model::{
    train_classifier, train_vae, Classifier, ClassifierExample, GeneratedPose, ModelKind, ModelManifest, PoseScore,
    Predictor, Vae, VaeExample, MANIFEST_FORMAT,
};
use affordance::synthetic::{write_corpus, CorpusConfig, CorpusSummary};
use affordance::{assign_class, encode, rng, CropFeatures, Featurizer, Point, Pose, RandomProjectionFeaturizer};
use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Config, Resolved};
use crate::manifest::RunRecorder;

/// A required input is missing; names the command that produces it.
#[derive(Debug)]
pub struct MissingPrerequisite {
    pub path: PathBuf,
    pub producer: &'static str,
}

impl std::fmt::Display for MissingPrerequisite {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} does not exist; run `affordance {}` first",
            self.path.display(),
            self.producer
        )
    }
}

impl std::error::Error for MissingPrerequisite {}

fn require(path: &Path, producer: &'static str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(MissingPrerequisite {
            path: path.to_path_buf(),
            producer,
        }
        .into())
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

/// Loaded dataset plus what is needed to recompute features for its records.
pub struct Data {
    pub path: PathBuf,
    pub dataset: Dataset,
    pub featurizer: RandomProjectionFeaturizer,
}

impl Data {
    pub fn load(r: &Resolved) -> Result<Self> {
        let path = r.path(&r.config.paths.dataset);
        require(&path, "mine")?;
        let dataset = read_dataset(&path)?;
        let featurizer = RandomProjectionFeaturizer::new(r.config.model.feature_dim, dataset.featurizer_seed);
        Ok(Self {
            path,
            dataset,
            featurizer,
        })
    }

    pub fn dir(&self) -> PathBuf {
        self.path.parent().map(Path::to_path_buf).unwrap_or_default()
    }

    pub fn image(&self, record: &AffordanceRecord) -> Result<SceneImage> {
        Ok(SceneImage::open(&self.dir().join(&record.image))?)
    }

    /// Cached features, or features recomputed from the scene image at the anchor.
    pub fn features(&self, record: &AffordanceRecord) -> Result<CropFeatures> {
        if let Some(f) = record.features.as_ref().filter(|f| f.dim() == self.featurizer.dim()) {
            return Ok(f.clone());
        }
        let img = self.image(record)?;
        Ok(self.featurizer.featurize_point(&img, record.anchor)?)
    }

    pub fn scene(&self, scene: &str) -> Result<&AffordanceRecord> {
        self.dataset
            .records
            .iter()
            .find(|r| r.scene_id == scene)
            .with_context(|| format!("scene {scene:?} is not in {}", self.path.display()))
    }
}

/// Accepted, non-synthetic-negative records.
pub fn positives(records: &[AffordanceRecord]) -> Vec<AffordanceRecord> {
    records
        .iter()
        .filter(|r| r.status.is_accepted() && !r.negative && !r.out_of_frame)
        .cloned()
        .collect()
}

fn split(r: &Resolved, records: &[AffordanceRecord]) -> Result<(Vec<AffordanceRecord>, Vec<AffordanceRecord>)> {
    Ok(split_by_show(&positives(records), &r.config.eval.test_show)?)
}

pub struct Vocab {
    pub path: PathBuf,
    pub vocab: PoseVocabulary,
}

impl Vocab {
    pub fn load(r: &Resolved) -> Result<Self> {
        let path = r.path(&r.config.paths.vocab);
        require(&path, "cluster")?;
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        Ok(Self {
            vocab: PoseVocabulary::from_text(&text, &path)?,
            path,
        })
    }
}

fn class_of(record: &AffordanceRecord, vocab: &PoseVocabulary) -> Result<usize> {
    match record.class_id {
        Some(c) if c < vocab.len() => Ok(c),
        _ => Ok(assign_class(&record.pose, vocab)?),
    }
}

pub fn make_fixture(out: &Path, seed: u64) -> Result<CorpusSummary> {
    let mut config = Config::desk_scale();
    config.seeds.corpus = seed;
    let corpus_dir = out.join(config.paths.corpus.parent().unwrap_or(Path::new("")));
    let summary = write_corpus(
        &corpus_dir,
        &CorpusConfig {
            seed,
            ..CorpusConfig::default()
        },
    )?;
    write_atomic(&out.join("affordance.toml"), config.to_toml().as_bytes())?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MineSummary {
    pub records: usize,
    pub accepted: usize,
    pub rejected: usize,
}

pub fn mine(r: &Resolved, auto_accept: bool) -> Result<MineSummary> {
    let c = &r.config;
    let corpus = r.path(&c.paths.corpus);
    require(&corpus, "make-fixture")?;
    let out = r.path(&c.paths.dataset);
    ensure_parent(&out)?;
    let dir = out.parent().map(Path::to_path_buf).unwrap_or_default();
    let featurizer = RandomProjectionFeaturizer::new(c.model.feature_dim, c.seeds.featurizer);
    let mut records = mine_corpus(&corpus, &c.mining_config(), &featurizer, &dir)?;
    let (accepted, rejected) = if auto_accept { auto_annotate(&mut records) } else { (0, 0) };
    let summary = MineSummary {
        records: records.len(),
        accepted,
        rejected,
    };
    let dataset = Dataset {
        featurizer_seed: c.seeds.featurizer,
        records,
    };
    let mut run = RunRecorder::new("mine", r);
    run.arg("auto_accept", auto_accept);
    run.input(&corpus)?;
    {
        let _lock = WriteLock::acquire(&out)?;
        write_dataset(&dataset, &out)?;
    }
    run.output(&out)?;
    run.finish(&out)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub k: usize,
    pub poses: usize,
    pub cost: f64,
    pub checksum: String,
}

/// Builds the vocabulary from training-show positives and stamps every
/// positive in the dataset with its class.
pub fn cluster(r: &Resolved) -> Result<ClusterSummary> {
    let c = &r.config;
    let mut data = Data::load(r)?;
    let (train, _) = split(r, &data.dataset.records)?;
    if train.len() < c.model.k {
        bail!(
            "{} training positives cannot form {} classes; accept more hypotheses or lower model.k",
            train.len(),
            c.model.k
        );
    }
    let poses: Vec<Pose> = train.iter().map(|r| r.pose.clone()).collect();
    let ids: Vec<u64> = train.iter().map(|r| r.id).collect();
    let (vocab, clustering) = PoseVocabulary::build(&poses, &ids, c.model.k, c.seeds.cluster)?;

    let mut run = RunRecorder::new("cluster", r);
    run.input(&data.path)?;
    let vocab_path = r.path(&c.paths.vocab);
    ensure_parent(&vocab_path)?;
    write_atomic(&vocab_path, vocab.to_text().as_bytes())?;
    {
        let _lock = WriteLock::acquire(&data.path)?;
        for rec in &mut data.dataset.records {
            rec.class_id = if rec.status.is_accepted() && !rec.negative && !rec.out_of_frame {
                Some(assign_class(&rec.pose, &vocab)?)
            } else {
                None
            };
        }
        write_dataset(&data.dataset, &data.path)?;
    }
    run.output(&vocab_path)?;
    run.output(&data.path)?;
    run.finish(&vocab_path)?;
    Ok(ClusterSummary {
        k: vocab.len(),
        poses: poses.len(),
        cost: clustering.cost,
        checksum: vocab.checksum(),
    })
}

fn base_manifest(data: &Data, vocab: &PoseVocabulary, seed: u64) -> ModelManifest {
    ModelManifest {
        format: MANIFEST_FORMAT,
        kind: ModelKind::Classifier,
        feature_dim: 0,
        classes: 0,
        hidden: 0,
        latent_dim: None,
        lambda: None,
        delta: None,
        vocab_checksum: vocab.checksum(),
        featurizer_seed: data.dataset.featurizer_seed,
        seed,
        checkpoint_checksum: String::new(),
    }
}

fn log_path(ckpt: &Path) -> PathBuf {
    let mut s = ckpt.as_os_str().to_owned();
    s.push(".log.json");
    PathBuf::from(s)
}

fn classifier_examples(data: &Data, records: &[AffordanceRecord], vocab: &PoseVocabulary) -> Result<Vec<ClassifierExample>> {
    records
        .par_iter()
        .map(|rec| {
            Ok(ClassifierExample {
                crops: data.features(rec)?,
                class: class_of(rec, vocab)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub examples: usize,
    pub final_loss: f64,
    pub final_accuracy: Option<f64>,
    pub delta: Option<f64>,
}

pub fn train_classifier_cmd(r: &Resolved) -> Result<TrainSummary> {
    let c = &r.config;
    let data = Data::load(r)?;
    let vocab = Vocab::load(r)?;
    let (train, _) = split(r, &data.dataset.records)?;
    let examples = classifier_examples(&data, &train, &vocab.vocab)?;
    let (model, log) = train_classifier(
        &examples,
        vocab.vocab.len(),
        &c.train_config(c.train.classifier_epochs),
        c.seeds.classifier,
    )?;
    let path = r.path(&c.paths.classifier);
    ensure_parent(&path)?;
    let mut run = RunRecorder::new("train-classifier", r);
    run.input(&data.path)?;
    run.input(&vocab.path)?;
    model.save(&path, base_manifest(&data, &vocab.vocab, c.seeds.classifier))?;
    let log_file = log_path(&path);
    write_atomic(&log_file, serde_json::to_string_pretty(&log)?.as_bytes())?;
    for p in [path.clone(), manifest_of(&path), log_file] {
        run.output(&p)?;
    }
    run.finish(&path)?;
    let last = log.epochs.last().or(log.initial.as_ref()).expect("initial stats are recorded");
    Ok(TrainSummary {
        examples: examples.len(),
        final_loss: last.loss,
        final_accuracy: last.accuracy,
        delta: None,
    })
}

fn manifest_of(ckpt: &Path) -> PathBuf {
    let mut s = ckpt.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn vae_example(data: &Data, rec: &AffordanceRecord, vocab: &PoseVocabulary) -> Result<VaeExample> {
    let class = class_of(rec, vocab)?;
    let center = vocab.center(class).expect("class in range");
    Ok(VaeExample {
        crops: data.features(rec)?,
        class,
        target: encode(&rec.pose, center, rec.anchor)?,
    })
}

/// Deterministic validation hold-out: a seeded shuffle, first share held out.
fn holdout(records: Vec<AffordanceRecord>, fraction: f64, seed: u64) -> (Vec<AffordanceRecord>, Vec<AffordanceRecord>) {
    let n_val = (fraction * records.len() as f64).floor() as usize;
    let mut keyed: Vec<(u64, AffordanceRecord)> =
        records.into_iter().map(|r| (rng::derive_seed(seed, r.id), r)).collect();
    keyed.sort_by_key(|(k, r)| (*k, r.id));
    let mut val: Vec<AffordanceRecord> = keyed.iter().take(n_val).map(|(_, r)| r.clone()).collect();
    let mut train: Vec<AffordanceRecord> = keyed.into_iter().skip(n_val).map(|(_, r)| r).collect();
    val.sort_by_key(|r| r.id);
    train.sort_by_key(|r| r.id);
    (train, val)
}

/// Plausibility distances for `records` (positives and negatives alike).
pub fn score_records(
    predictor: &Predictor,
    data: &Data,
    records: &[AffordanceRecord],
    m: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    records
        .par_iter()
        .map(|rec| {
            let crops = data.features(rec)?;
            let s = predictor.score_pose(&crops, rec.anchor, &rec.pose, m, f64::INFINITY, rng::derive_seed(seed, rec.id))?;
            Ok(s.distance)
        })
        .collect()
}

fn with_negatives(r: &Resolved, data: &Data, vocab: &PoseVocabulary, positives: &[AffordanceRecord]) -> Result<(Vec<AffordanceRecord>, Vec<bool>)> {
    let c = &r.config;
    let mut labeled: Vec<AffordanceRecord> = positives.to_vec();
    for p in &mut labeled {
        p.class_id = Some(class_of(p, vocab)?);
    }
    let negatives = synthesize_negatives(&labeled, vocab, c.seeds.negatives, c.eval.negative_ratio, data.dataset.next_id())?;
    let mut labels = vec![true; labeled.len()];
    labels.extend(std::iter::repeat_n(false, negatives.len()));
    labeled.extend(negatives);
    Ok((labeled, labels))
}

/// Trains the VAE on training-show positives minus a validation share, then
/// picks delta as the best-F1 threshold on the validation positives and
/// their synthesized negatives. A configured `model.delta` skips calibration.
pub fn train_vae_cmd(r: &Resolved) -> Result<TrainSummary> {
    let c = &r.config;
    let data = Data::load(r)?;
    let vocab = Vocab::load(r)?;
    let classifier_path = r.path(&c.paths.classifier);
    require(&classifier_path, "train-classifier")?;
    let (classifier, cmanifest) = Classifier::load(&classifier_path)?;
    if cmanifest.vocab_checksum != vocab.vocab.checksum() {
        bail!(
            "{} was trained against another vocabulary; rerun `affordance train-classifier`",
            classifier_path.display()
        );
    }
    let (train, _) = split(r, &data.dataset.records)?;
    let fraction = if c.model.delta.is_some() { 0.0 } else { c.train.val_fraction };
    let (fit, val) = holdout(train, fraction, c.seeds.split);
    let examples = fit
        .par_iter()
        .map(|rec| vae_example(&data, rec, &vocab.vocab))
        .collect::<Result<Vec<_>>>()?;
    let (vae, log) = train_vae(
        &examples,
        vocab.vocab.len(),
        c.model.latent_dim,
        c.model.lambda,
        &c.train_config(c.train.vae_epochs),
        c.seeds.vae,
    )?;

    let delta = match c.model.delta {
        Some(d) => d,
        None => {
            if val.is_empty() {
                bail!("no validation positives to calibrate delta; raise train.val_fraction or set model.delta");
            }
            let predictor = Predictor::new(&classifier, &vae, &vocab.vocab)?.with_conditioning(c.model.conditioning);
            let (records, labels) = with_negatives(r, &data, &vocab.vocab, &val)?;
            let distances = score_records(&predictor, &data, &records, c.model.m, c.seeds.generate)?;
            select_delta(&distances, &labels)?
        }
    };

    let path = r.path(&c.paths.vae);
    ensure_parent(&path)?;
    let mut run = RunRecorder::new("train-vae", r);
    run.input(&data.path)?;
    run.input(&vocab.path)?;
    run.input(&classifier_path)?;
    let manifest = ModelManifest {
        lambda: Some(c.model.lambda),
        delta: Some(delta),
        ..base_manifest(&data, &vocab.vocab, c.seeds.vae)
    };
    vae.save(&path, manifest)?;
    let log_file = log_path(&path);
    write_atomic(&log_file, serde_json::to_string_pretty(&log)?.as_bytes())?;
    for p in [path.clone(), manifest_of(&path), log_file] {
        run.output(&p)?;
    }
    run.finish(&path)?;
    let last = log.epochs.last().or(log.initial.as_ref()).expect("initial stats are recorded");
    Ok(TrainSummary {
        examples: examples.len(),
        final_loss: last.loss,
        final_accuracy: None,
        delta: Some(delta),
    })
}

/// Frozen models ready for inference.
pub struct Models {
    pub classifier: Classifier,
    pub vae: Vae,
    pub vocab: PoseVocabulary,
    pub delta: f64,
    pub conditioning: affordance::model::ClassConditioning,
    pub inputs: Vec<PathBuf>,
}

impl Models {
    pub fn load(r: &Resolved) -> Result<Self> {
        let c = &r.config;
        let vocab = Vocab::load(r)?;
        let cpath = r.path(&c.paths.classifier);
        require(&cpath, "train-classifier")?;
        let vpath = r.path(&c.paths.vae);
        require(&vpath, "train-vae")?;
        let (classifier, cm) = Classifier::load(&cpath)?;
        let (vae, vm) = Vae::load(&vpath)?;
        let sum = vocab.vocab.checksum();
        for (p, m) in [(&cpath, &cm), (&vpath, &vm)] {
            if m.vocab_checksum != sum {
                bail!("{} does not match the current vocabulary; retrain it", p.display());
            }
        }
        let delta = c.model.delta.or(vm.delta).context("no delta configured or stored in the VAE manifest")?;
        Ok(Self {
            classifier,
            vae,
            vocab: vocab.vocab,
            delta,
            conditioning: c.model.conditioning,
            inputs: vec![vocab.path, cpath, vpath],
        })
    }

    pub fn predictor(&self) -> Result<Predictor<'_>> {
        Ok(Predictor::new(&self.classifier, &self.vae, &self.vocab)?.with_conditioning(self.conditioning))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateOutput {
    pub scene: String,
    pub point: Point,
    pub seed: u64,
    pub samples: Vec<GeneratedPose>,
}

pub fn generate(data: &Data, models: &Models, scene: &str, point: Point, samples: usize, seed: u64) -> Result<GenerateOutput> {
    let rec = data.scene(scene)?;
    let img = data.image(rec)?;
    let crops = data.featurizer.featurize_point(&img, point)?;
    let samples = models.predictor()?.generate_pose(&crops, point, samples, seed)?;
    Ok(GenerateOutput {
        scene: scene.to_owned(),
        point,
        seed,
        samples,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreOutput {
    pub scene: String,
    pub anchor: Point,
    pub m: usize,
    pub delta: f64,
    #[serde(flatten)]
    pub score: PoseScore,
}

/// Scores `pose` at its bbox center in `scene`.
pub fn score(data: &Data, models: &Models, scene: &str, pose: &Pose, m: usize, seed: u64) -> Result<ScoreOutput> {
    let rec = data.scene(scene)?;
    let img = data.image(rec)?;
    let anchor = pose.bbox().center();
    let crops = data.featurizer.featurize_point(&img, anchor)?;
    let score = models.predictor()?.score_pose(&crops, anchor, pose, m, models.delta, seed)?;
    Ok(ScoreOutput {
        scene: scene.to_owned(),
        anchor,
        m,
        delta: models.delta,
        score,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluateOutput {
    pub report: EvalReport,
    pub delta: f64,
    /// Share of test records whose plausible flag matches the label.
    pub accuracy_at_delta: f64,
    pub files: BTreeMap<String, PathBuf>,
}

/// Top-k classification on test-show positives and the precision/recall
/// sweep over those positives plus synthesized negatives.
pub fn evaluate(r: &Resolved) -> Result<EvaluateOutput> {
    let c = &r.config;
    let data = Data::load(r)?;
    let models = Models::load(r)?;
    let (_, test) = split(r, &data.dataset.records)?;
    if test.is_empty() {
        bail!("no accepted records from test show {:?}", c.eval.test_show);
    }
    let examples = classifier_examples(&data, &test, &models.vocab)?;
    let probs = examples
        .iter()
        .map(|e| models.classifier.classify(&e.crops))
        .collect::<affordance::Result<Vec<_>>>()?;
    let labels: Vec<usize> = examples.iter().map(|e| e.class).collect();
    let topk = topk_accuracies(&probs, &labels, c.eval.k_max)?;

    let (records, labels) = with_negatives(r, &data, &models.vocab, &test)?;
    let predictor = models.predictor()?;
    let distances = score_records(&predictor, &data, &records, c.model.m, c.seeds.generate)?;
    let pr = evaluate_pr(&distances, &labels)?;
    let hits = distances
        .iter()
        .zip(&labels)
        .filter(|(d, l)| (**d < models.delta) == **l)
        .count();
    let report = EvalReport { topk, pr };

    let dir = r.path(&c.paths.report);
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut run = RunRecorder::new("evaluate", r);
    run.input(&data.path)?;
    for p in &models.inputs {
        run.input(p)?;
    }
    let files = BTreeMap::from([
        ("json".to_owned(), dir.join("report.json")),
        ("table".to_owned(), dir.join("report.txt")),
        ("pr".to_owned(), dir.join("pr.csv")),
    ]);
    write_atomic(&files["json"], format!("{}\n", serde_json::to_string_pretty(&report)?).as_bytes())?;
    write_atomic(&files["table"], report.to_table().as_bytes())?;
    write_atomic(&files["pr"], report.pr.to_csv().as_bytes())?;
    for p in files.values() {
        run.output(p)?;
    }
    run.finish(&files["json"])?;
    Ok(EvaluateOutput {
        accuracy_at_delta: hits as f64 / labels.len() as f64,
        delta: models.delta,
        report,
        files,
    })
}
