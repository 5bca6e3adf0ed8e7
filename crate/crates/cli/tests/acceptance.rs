use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use affordance::dataset::{read_dataset, write_dataset, Dataset, Source};
use affordance::eval::evaluate_topk;
use affordance::mining::{accumulate_flow, transfer_pose, FlowField, TargetFrame};
use affordance::model::{train_classifier, train_vae, Classifier, Predictor, TrainConfig, Vae};
use affordance::nn::gradcheck::{max_relative_error, numeric_gradient, numeric_gradient_of};
use affordance::nn::{
    kl_to_standard_normal, reparameterize, reparameterize_backward, softmax_cross_entropy,
    squared_error, Activation, AdamConfig, DenseNet, GaussianParams,
};
use affordance::rng::{self, Rng};
use affordance::synthetic::{self, conditional_vae_fixture, pan_sequence, separable_classifier_fixture};
use affordance::{
    decode, encode, k_medoids, normalize, ConditionInput, CropFeatures, DistanceMatrix, Error, Point, PoseVocabulary,
};
use affordance_cli::config::{self, Resolved};
use affordance_cli::pipeline;

type Outcome = Result<String, String>;

const GRAD_TOLERANCE: f64 = 1e-4;
const INSTANCES_PER_FAMILY: usize = 20;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn normal(r: &mut Rng) -> f64 {
    rng::standard_normal(r, 1)[0]
}

fn jitter(params: Vec<&mut [f64]>, r: &mut Rng) {
    // moves every relu pre-activation off zero
    for slot in params {
        let noise = rng::standard_normal(r, slot.len());
        for (v, e) in slot.iter_mut().zip(noise) {
            *v += 0.1 * e;
        }
    }
}

fn crops(r: &mut Rng, dim: usize) -> CropFeatures {
    CropFeatures {
        full: rng::standard_normal(r, dim),
        half: rng::standard_normal(r, dim),
        whole: rng::standard_normal(r, dim),
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// Gradients

fn dense_instance(r: &mut Rng, output: Activation) -> f64 {
    let mut net = DenseNet::new(&[5, 7, 6, 4], Activation::Relu, output, r);
    jitter(net.params_mut(), r);
    let x = rng::standard_normal(r, 5);
    let w = rng::standard_normal(r, 4);
    let (_, trace) = net.forward(&x).unwrap();
    let (grads, grad_x) = net.backward(&trace, &w).unwrap();
    let analytic: Vec<f64> = grads.slices().concat();
    let numeric = numeric_gradient(&mut net, |n| n.params_mut(), |n| dot(&n.infer(&x).unwrap(), &w));
    let numeric_x = numeric_gradient_of(|x| dot(&net.infer(x).unwrap(), &w), &x);
    max_relative_error(&analytic, &numeric).max(max_relative_error(&grad_x, &numeric_x))
}

fn softmax_ce_instance(r: &mut Rng, i: usize) -> f64 {
    let logits: Vec<f64> = rng::standard_normal(r, 6).iter().map(|v| 3.0 * v).collect();
    let label = i % 6;
    let analytic = softmax_cross_entropy(&logits, label).unwrap().grad;
    let numeric = numeric_gradient_of(|l| softmax_cross_entropy(l, label).unwrap().loss, &logits);
    max_relative_error(&analytic, &numeric)
}

fn squared_error_instance(r: &mut Rng) -> f64 {
    let target = rng::standard_normal(r, 8);
    let y = rng::standard_normal(r, 8);
    let analytic = squared_error(&y, &target).unwrap().grad;
    let numeric = numeric_gradient_of(|y| squared_error(y, &target).unwrap().loss, &y);
    max_relative_error(&analytic, &numeric)
}

fn kl_instance(r: &mut Rng) -> f64 {
    let x = rng::standard_normal(r, 10);
    let kl = kl_to_standard_normal(&GaussianParams::from_concat(&x).unwrap());
    let analytic = [kl.grad_mu, kl.grad_log_var].concat();
    let numeric = numeric_gradient_of(|x| kl_to_standard_normal(&GaussianParams::from_concat(x).unwrap()).loss, &x);
    max_relative_error(&analytic, &numeric)
}

fn reparameterize_instance(r: &mut Rng) -> f64 {
    let x = rng::standard_normal(r, 10);
    let alpha = rng::standard_normal(r, 5);
    let w = rng::standard_normal(r, 5);
    let g = GaussianParams::from_concat(&x).unwrap();
    let (gmu, glv) = reparameterize_backward(&g, &alpha, &w);
    let numeric = numeric_gradient_of(
        |x| dot(&reparameterize(&GaussianParams::from_concat(x).unwrap(), &alpha).unwrap(), &w),
        &x,
    );
    max_relative_error(&[gmu, glv].concat(), &numeric)
}

fn vae_instance(r: &mut Rng, seed: u64) -> f64 {
    let (dim, classes, latent) = (4, 3, 3);
    let mut vae = Vae::new(dim, classes, 5, latent, seed);
    jitter(vae.params_mut(), r);
    let cond = ConditionInput::one_hot(crops(r, dim), seed as usize % classes, classes).unwrap();
    let y = rng::standard_normal(r, 36);
    let alpha = rng::standard_normal(r, latent);
    let (_, grads) = vae.loss_and_grads(&cond, &y, &alpha, 0.7).unwrap();
    let analytic: Vec<f64> = grads.slices().concat();
    let numeric = numeric_gradient(&mut vae, |v| v.params_mut(), |v| v.loss(&cond, &y, &alpha, 0.7).unwrap().total);
    max_relative_error(&analytic, &numeric)
}

fn classifier_instance(r: &mut Rng, seed: u64) -> f64 {
    let (dim, classes) = (5, 4);
    let mut clf = Classifier::new(dim, classes, 6, seed);
    jitter(clf.params_mut(), r);
    let ex = affordance::model::ClassifierExample {
        crops: crops(r, dim),
        class: seed as usize % classes,
    };
    let (_, grads, _) = clf.loss_and_grads(&ex).unwrap();
    let analytic: Vec<f64> = grads.slices().concat();
    let numeric = numeric_gradient(&mut clf, |c| c.params_mut(), |c| {
        softmax_cross_entropy(&c.logits(&ex.crops).unwrap(), ex.class).unwrap().loss
    });
    max_relative_error(&analytic, &numeric)
}

fn gradients() -> Outcome {
    let mut r = rng::seeded(11);
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    let mut instances = 0;
    for i in 0..INSTANCES_PER_FAMILY {
        let seed = i as u64;
        let errors = [
            ("dense-relu", dense_instance(&mut r, Activation::Relu)),
            ("dense-linear", dense_instance(&mut r, Activation::Identity)),
            ("softmax-ce", softmax_ce_instance(&mut r, i)),
            ("squared-error", squared_error_instance(&mut r)),
            ("kl", kl_instance(&mut r)),
            ("reparameterize", reparameterize_instance(&mut r)),
            ("vae", vae_instance(&mut r, seed)),
            ("classifier", classifier_instance(&mut r, seed)),
        ];
        for (name, e) in errors {
            let w = worst.entry(name).or_insert(0.0);
            *w = w.max(e);
            instances += 1;
        }
    }
    let max = worst.values().copied().fold(0.0, f64::max);
    let parts: Vec<String> = worst.iter().map(|(k, v)| format!("{k}={v:.1e}")).collect();
    check(
        max < GRAD_TOLERANCE && instances >= 100,
        format!("{instances} instances, max rel err {max:.2e} ({})", parts.join(" ")),
    )
}

// k-medoids

fn exhaustive_optimum(d: &DistanceMatrix, k: usize) -> f64 {
    fn go(d: &DistanceMatrix, k: usize, start: usize, chosen: &mut Vec<usize>, best: &mut f64) {
        if chosen.len() == k {
            let cost = (0..d.len())
                .map(|i| chosen.iter().map(|&m| d.get(i, m)).fold(f64::INFINITY, f64::min))
                .sum::<f64>();
            *best = best.min(cost);
            return;
        }
        for m in start..d.len() {
            chosen.push(m);
            go(d, k, m + 1, chosen, best);
            chosen.pop();
        }
    }
    let mut best = f64::INFINITY;
    go(d, k, 0, &mut Vec::new(), &mut best);
    best
}

fn euclidean(points: &[(f64, f64)]) -> DistanceMatrix {
    DistanceMatrix::from_fn(points.len(), |i, j| {
        let (a, b) = (points[i], points[j]);
        ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
    })
}

fn k_medoids_oracle() -> Outcome {
    let mut r = rng::seeded(21);
    let mut worst_ratio: f64 = 0.0;
    for i in 0..20 {
        let n = 6 + i % 7;
        let k = 1 + i % 3;
        let points: Vec<(f64, f64)> = (0..n).map(|_| (normal(&mut r), normal(&mut r))).collect();
        let d = euclidean(&points);
        let got = k_medoids(&d, k, i as u64).map_err(|e| e.to_string())?;
        let opt = exhaustive_optimum(&d, k);
        worst_ratio = worst_ratio.max(if opt > 0.0 { got.cost / opt } else { 1.0 });
    }
    let mut recovered = 0;
    let fixtures = 5;
    for f in 0..fixtures {
        let centers = [(0.0, 0.0), (100.0, 0.0), (0.0, 100.0)];
        let per = 4;
        let points: Vec<(f64, f64)> = centers
            .iter()
            .flat_map(|&(x, y)| (0..per).map(|_| (x + normal(&mut r), y + normal(&mut r))).collect::<Vec<_>>())
            .collect();
        let d = euclidean(&points);
        let got = k_medoids(&d, 3, f).map_err(|e| e.to_string())?;
        let groups_ok = (0..points.len()).all(|i| {
            (0..points.len()).all(|j| (got.assignment[i] == got.assignment[j]) == (i / per == j / per))
        });
        let optimal = (got.cost - exhaustive_optimum(&d, 3)).abs() < 1e-9;
        if groups_ok && optimal {
            recovered += 1;
        }
    }
    check(
        worst_ratio <= 1.05 && recovered == fixtures,
        format!("20 instances, worst cost/optimum {worst_ratio:.4}; separated fixtures recovered {recovered}/{fixtures}"),
    )
}

// Codec

fn codec() -> Outcome {
    let mut r = rng::seeded(31);
    let mut worst: f64 = 0.0;
    for i in 0..1000 {
        let pose = synthetic::random_pose(&mut r);
        let center = normalize(&synthetic::random_pose(&mut r)).map_err(|e| e.to_string())?;
        let anchor = if i % 2 == 0 {
            pose.bbox().center()
        } else {
            Point::new(100.0 * normal(&mut r), 100.0 * normal(&mut r))
        };
        let sd = encode(&pose, &center, anchor).map_err(|e| e.to_string())?;
        let back = decode(&sd, &center, anchor).map_err(|e| e.to_string())?;
        for (p, q) in pose.joints().iter().zip(back.joints()) {
            worst = worst.max((p.x - q.x).abs()).max((p.y - q.y).abs());
        }
    }
    check(worst <= 1e-9, format!("1000 poses, max joint error {worst:.2e}"))
}

// VAE learning

fn vae_learning() -> Outcome {
    const SAMPLES: usize = 500;
    let classes = 3;
    let fixture = conditional_vae_fixture(classes, 200, 8, 1.0, 41);
    let config = TrainConfig {
        epochs: 200,
        batch_size: 32,
        hidden: 32,
        adam: AdamConfig {
            lr: 1e-3,
            ..AdamConfig::default()
        },
    };
    let (vae, log) = train_vae(&fixture.examples, classes, 8, 1.0, &config, 41).map_err(|e| e.to_string())?;
    let initial = log.initial.as_ref().and_then(|s| s.reconstruction).ok_or("no initial loss")?;
    let last = log.epochs.last().and_then(|s| s.reconstruction).ok_or("no final loss")?;
    let drop = 1.0 - last / initial;

    let se = fixture.noise / (SAMPLES as f64).sqrt();
    let mut r = rng::seeded(42);
    let mut worst_z: f64 = 0.0;
    for class in 0..classes {
        let own: Vec<_> = fixture.examples.iter().filter(|e| e.class == class).collect();
        let mut mean = vec![0.0; 36];
        for s in 0..SAMPLES {
            let cond = ConditionInput::one_hot(own[s % own.len()].crops.clone(), class, classes).unwrap();
            let z = rng::standard_normal(&mut r, vae.latent_dim());
            for (m, v) in mean.iter_mut().zip(vae.decode(&cond, &z).unwrap()) {
                *m += v / SAMPLES as f64;
            }
        }
        for (m, t) in mean.iter().zip(&fixture.means[class]) {
            worst_z = worst_z.max((m - t).abs() / se);
        }
    }
    check(
        drop >= 0.5 && worst_z <= 3.0,
        format!("reconstruction {initial:.3} -> {last:.3} (drop {:.1}%), worst class-mean deviation {worst_z:.2} SE over {SAMPLES} samples", 100.0 * drop),
    )
}

// Classifier learning

fn classifier_learning() -> Outcome {
    let examples = separable_classifier_fixture(4, 50, 8, 51);
    let config = TrainConfig {
        epochs: 50,
        batch_size: 16,
        hidden: 16,
        adam: AdamConfig {
            lr: 1e-3,
            ..AdamConfig::default()
        },
    };
    let (clf, _) = train_classifier(&examples, 4, &config, 51).map_err(|e| e.to_string())?;
    let topk = evaluate_topk(&clf, &examples, 4).map_err(|e| e.to_string())?;
    let monotone = topk.windows(2).all(|w| w[0] <= w[1]);

    let mut uniform = Classifier::new(8, 30, 4, 52);
    for layer in uniform.head_mut().layers_mut() {
        layer.weights_mut().fill(0.0);
        layer.bias_mut().fill(0.0);
    }
    let mut r = rng::seeded(53);
    let cycled: Vec<_> = (0..90)
        .map(|i| affordance::model::ClassifierExample {
            crops: crops(&mut r, 8),
            class: i % 30,
        })
        .collect();
    let flat = evaluate_topk(&uniform, &cycled, 5).map_err(|e| e.to_string())?;
    let exact = flat.iter().enumerate().all(|(i, &a)| a == (i + 1) as f64 / 30.0);
    check(
        topk[0] >= 0.95 && monotone && exact,
        format!("top-1 {:.3}, top-k {topk:.3?} monotone={monotone}; uniform {flat:.4?} exact={exact}", topk[0]),
    )
}

// Inference contracts

fn zero_variance_models(dim: usize) -> (Classifier, Vae, PoseVocabulary) {
    let classes = 3;
    let mut r = rng::seeded(61);
    let mut clf = Classifier::new(dim, classes, 8, 61);
    clf.set_trained(true);
    let mut vae = Vae::new(dim, classes, 8, 4, 62);
    let out = vae.decoder_head_mut().layers_mut().last_mut().unwrap();
    out.weights_mut().fill(0.0);
    let mut bias = rng::standard_normal(&mut r, 36);
    bias[0] = 50.0;
    bias[1] = 30.0;
    out.bias_mut().copy_from_slice(&bias);
    vae.set_trained(true);
    let centers = (0..classes).map(|_| normalize(&synthetic::random_pose(&mut r)).unwrap()).collect();
    let vocab = PoseVocabulary::new(centers, (0..classes as u64).collect()).unwrap();
    (clf, vae, vocab)
}

fn inference_contracts() -> Outcome {
    let dim = 6;
    let (clf, vae, vocab) = zero_variance_models(dim);
    let predictor = Predictor::new(&clf, &vae, &vocab).map_err(|e| e.to_string())?;
    let mut r = rng::seeded(63);
    let c = crops(&mut r, dim);
    let anchor = Point::new(48.0, 36.0);
    let candidate = predictor.generate_pose(&c, anchor, 1, 0).unwrap().remove(0).pose;
    let far = candidate.translated(1e6, 0.0);
    let deltas = [1e-300, 1e-6, 1.0, 7.5, 1e3, 1e5];
    let mut failures = Vec::new();
    for m in [1, 10, 25] {
        for &delta in &deltas {
            let near = predictor.score_pose(&c, anchor, &candidate, m, delta, 64).unwrap();
            if near.distance != 0.0 || !near.plausible {
                failures.push(format!("m={m} delta={delta}: identical candidate scored {}", near.distance));
            }
            let away = predictor.score_pose(&c, anchor, &far, m, delta, 64).unwrap();
            if away.distance <= delta || away.plausible {
                failures.push(format!("m={m} delta={delta}: translated candidate scored {}", away.distance));
            }
        }
    }
    if predictor.score_pose(&c, anchor, &candidate, 0, 1.0, 64).is_ok() {
        failures.push("m=0 accepted".into());
    }

    let defaults = config::load(None, [], &[]).map_err(|e| e.to_string())?;
    let set = config::load(None, [], &["model.m=7".into(), "model.delta=3.5".into()]).map_err(|e| e.to_string())?;
    let env = config::load(None, [("AFFORD_MODEL_M".to_owned(), "12".to_owned())], &[]).map_err(|e| e.to_string())?;
    let configurable = defaults.config.model.m == 10
        && defaults.config.model.delta.is_none()
        && set.config.model.m == 7
        && set.config.model.delta == Some(3.5)
        && env.config.model.m == 12;
    if !configurable {
        failures.push("m / delta overrides not applied".into());
    }
    check(
        failures.is_empty(),
        if failures.is_empty() {
            format!("distance 0 and > delta across m in {{1,10,25}} and {} deltas; default m=10, overrides applied", deltas.len())
        } else {
            failures.join("; ")
        },
    )
}

// Flow transfer

fn flow_transfer() -> Outcome {
    let (w, h) = (96, 72);
    let target = TargetFrame {
        scene_id: "pan/0".into(),
        show: "pan".into(),
        image: "pan.png".into(),
        width: w,
        height: h,
    };
    let mut worst: f64 = 0.0;
    for seed in 0..10 {
        let seq = pan_sequence(w, h, 10, seed).map_err(|e| e.to_string())?;
        let field = accumulate_flow(&seq.flows).map_err(|e| e.to_string())?;
        let rec = transfer_pose(&seq.planted, &field, &target, Source::Local, 0).map_err(|e| e.to_string())?;
        for (p, q) in rec.pose.joints().iter().zip(seq.expected.joints()) {
            worst = worst.max(p.distance(*q));
        }
    }
    let zeros: Vec<FlowField> = (0..5).map(|_| FlowField::zeros(w, h).unwrap()).collect();
    let identity = accumulate_flow(&zeros).map_err(|e| e.to_string())?;
    let mut r = rng::seeded(71);
    let fixed = (0..w).all(|i| (0..h).all(|j| identity.at(i, j) == (0.0, 0.0)))
        && (0..100).all(|_| {
            let p = Point::new(96.0 * normal(&mut r).abs() % 96.0, 72.0 * normal(&mut r).abs() % 72.0);
            identity.warp(p) == p
        });
    check(
        worst <= 1.0 && fixed,
        format!("10 pan sequences, max joint error {worst:.3} px; identity accumulation fixed={fixed}"),
    )
}

// End-to-end

fn run_pipeline(dir: &Path) -> anyhow::Result<(Resolved, pipeline::EvaluateOutput)> {
    pipeline::make_fixture(dir, 0)?;
    let r = config::load(Some(&dir.join("affordance.toml")), [], &[])?;
    pipeline::mine(&r, true)?;
    pipeline::cluster(&r)?;
    pipeline::train_classifier_cmd(&r)?;
    pipeline::train_vae_cmd(&r)?;
    let out = pipeline::evaluate(&r)?;
    Ok((r, out))
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_owned(), std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

struct Smoke {
    out: pipeline::EvaluateOutput,
    identical: bool,
    artifacts: BTreeMap<PathBuf, Vec<u8>>,
}

fn smoke() -> Result<Smoke, String> {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (_, out) = run_pipeline(a.path()).map_err(|e| format!("{e:#}"))?;
    run_pipeline(b.path()).map_err(|e| format!("{e:#}"))?;
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    let out = pipeline::EvaluateOutput {
        files: out
            .files
            .into_iter()
            .map(|(k, p)| (k, p.strip_prefix(a.path()).unwrap().to_owned()))
            .collect(),
        ..out
    };
    Ok(Smoke {
        identical: ta == tb,
        artifacts: ta,
        out,
    })
}

fn end_to_end(s: &Smoke) -> Outcome {
    let ap = s.out.report.pr.average_precision;
    let prevalence = s.out.report.pr.prevalence();
    check(
        s.identical && ap > prevalence,
        format!("{} artifacts byte-identical={}, AP {ap:.4} vs prevalence {prevalence:.4}", s.artifacts.len(), s.identical),
    )
}

fn protocol(s: &Smoke) -> Outcome {
    let read = |key: &str| {
        s.out.files.get(key).and_then(|p| s.artifacts.get(p)).map(|b| String::from_utf8_lossy(b).into_owned())
    };
    let table = read("table").unwrap_or_default();
    let csv = read("pr").unwrap_or_default();
    let json = read("json").unwrap_or_default();
    let rows: Vec<&str> = table.lines().filter(|l| l.starts_with("top-") && l.ends_with('%')).collect();
    let names_ok = rows.iter().enumerate().all(|(i, l)| l.starts_with(&format!("top-{} ", i + 1)));
    let mut csv_lines = csv.lines();
    let header_ok = csv_lines.next() == Some("threshold,precision,recall");
    let points = csv_lines.filter(|l| l.split(',').count() == 3 && l.split(',').all(|v| v.parse::<f64>().is_ok())).count();
    let json_ok = serde_json::from_str::<affordance::eval::EvalReport>(&json).is_ok_and(|r| r.topk.len() == 5);
    check(
        s.out.report.topk.len() == 5 && rows.len() == 5 && names_ok && header_ok && points >= 2 && json_ok,
        format!("table rows top-1..top-{}, pr.csv {points} points header={header_ok}, report.json parsed={json_ok}", rows.len()),
    )
}

// Dataset

fn dataset_round_trip() -> Outcome {
    let mut r = rng::seeded(81);
    let mut ds = Dataset::new(3);
    ds.records = (0..1000).map(|id| synthetic::random_record(&mut r, id)).collect();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("dataset.afd");
    write_dataset(&ds, &path).map_err(|e| e.to_string())?;
    let first = std::fs::read(&path).unwrap();
    let again = read_dataset(&path).map_err(|e| e.to_string())?;
    write_dataset(&again, &path).map_err(|e| e.to_string())?;
    let second = std::fs::read(&path).unwrap();
    let identical = first == second && again == ds;

    let text = String::from_utf8(first).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let mut located = 0;
    let corruptions: [(usize, fn(&str) -> String); 3] = [
        (17, |l| l[..l.len() / 2].to_owned()),
        (404, |l| l.replacen("\"status\":\"", "\"status\":\"x", 1)),
        (lines.len(), |_| "not json".to_owned()),
    ];
    for (line, corrupt) in corruptions {
        let mut broken: Vec<String> = lines.iter().map(|s| s.to_string()).collect();
        broken[line - 1] = corrupt(&broken[line - 1]);
        let joined = broken.join("\n") + "\n";
        match Dataset::from_text(&joined, Path::new("broken.afd")) {
            Err(Error::Format { line: l, .. }) if l == line => located += 1,
            _ => {}
        }
    }
    check(
        identical && located == corruptions.len(),
        format!("1000 records byte-identical={identical}; corrupted lines located {located}/{}", corruptions.len()),
    )
}

struct Criterion {
    name: &'static str,
    budget: Option<Duration>,
    outcome: Outcome,
    elapsed: Duration,
}

fn timed(name: &'static str, budget: Option<Duration>, f: impl FnOnce() -> Outcome) -> Criterion {
    let start = Instant::now();
    let outcome = f();
    Criterion {
        name,
        budget,
        outcome,
        elapsed: start.elapsed(),
    }
}

#[test]
fn acceptance() {
    let minutes = |m: u64| Some(Duration::from_secs(60 * m));
    let mut results = vec![
        timed("gradient-correctness", minutes(1), gradients),
        timed("k-medoids-optimality", minutes(1), k_medoids_oracle),
        timed("pose-codec-round-trip", None, codec),
        timed("vae-learning", minutes(5), vae_learning),
        timed("classifier-learning", None, classifier_learning),
        timed("inference-contracts", None, inference_contracts),
        timed("flow-transfer", None, flow_transfer),
    ];
    let start = Instant::now();
    let smoke = smoke();
    let smoke_elapsed = start.elapsed();
    let (e2e, proto) = match &smoke {
        Ok(s) => (end_to_end(s), protocol(s)),
        Err(e) => (Err(e.clone()), Err(format!("pipeline failed: {e}"))),
    };
    results.push(Criterion {
        name: "end-to-end-smoke",
        budget: minutes(10),
        outcome: e2e,
        elapsed: smoke_elapsed,
    });
    results.push(Criterion {
        name: "protocol-shape",
        budget: None,
        outcome: proto,
        elapsed: smoke_elapsed,
    });
    results.push(timed("dataset-round-trip", None, dataset_round_trip));

    let mut failed = Vec::new();
    for c in &results {
        let over = c.budget.is_some_and(|b| c.elapsed > b);
        let (ok, detail) = match &c.outcome {
            Ok(d) => (!over, d.as_str()),
            Err(d) => (false, d.as_str()),
        };
        let budget = c.budget.map(|b| format!(" / {}s", b.as_secs())).unwrap_or_default();
        println!(
            "{} {:<24} {detail} [{:.1}s{budget}]",
            if ok { "PASS" } else { "FAIL" },
            c.name,
            c.elapsed.as_secs_f64()
        );
        if !ok {
            failed.push(c.name);
        }
    }
    assert!(failed.is_empty(), "failed: {failed:?}");
}
