use std::io::Write as _;
use std::path::{Path, PathBuf};

use affordance::{Point, Pose};
use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::{self, Resolved};
use crate::pipeline::{self, Data, Models};
use crate::{serve, UsageError};

pub const DEFAULT_CONFIG: &str = "affordance.toml";

#[derive(Debug, Parser)]
#[command(name = "affordance", version, about = "Scene affordance pipeline: mine, cluster, train, evaluate and serve")]
pub struct Cli {
    /// Config file; defaults to ./affordance.toml when present.
    #[arg(long, global = true, env = "AFFORD_CONFIG")]
    pub config: Option<PathBuf>,

    /// Override one config field, e.g. `--set model.k=12`. Repeatable.
    #[arg(long = "set", global = true, value_name = "SECTION.FIELD=VALUE")]
    pub sets: Vec<String>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the bundled synthetic corpus and a matching config.
    MakeFixture {
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Filter empty frames and transfer poses into them.
    Mine {
        /// Accept in-frame hypotheses and reject the rest instead of leaving
        /// them for manual annotation.
        #[arg(long)]
        auto_accept: bool,
        #[arg(long)]
        featurizer_seed: Option<u64>,
    },
    /// Build the pose vocabulary and assign classes.
    Cluster {
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the pose-class classifier.
    TrainClassifier(TrainArgs),
    /// Train the conditional VAE and calibrate delta.
    TrainVae {
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        latent_dim: Option<usize>,
    },
    /// Sample poses at a point of a scene.
    Generate {
        #[arg(long)]
        scene: String,
        /// Pixel coordinates `x,y`.
        #[arg(long, value_parser = parse_point)]
        point: Point,
        #[arg(long, default_value_t = 5)]
        samples: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// Write the JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a pose's plausibility in a scene.
    Score {
        /// Score this dataset record in its own scene.
        #[arg(long, conflicts_with_all = ["scene", "pose"])]
        record: Option<u64>,
        #[arg(long, requires = "pose")]
        scene: Option<String>,
        /// JSON file holding 17 `[x, y]` joints.
        #[arg(long, requires = "scene")]
        pose: Option<PathBuf>,
        #[arg(long)]
        m: Option<usize>,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Top-k accuracy and precision/recall on the held-out show.
    Evaluate {
        #[arg(long)]
        test_show: Option<String>,
        #[arg(long)]
        m: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Serve the annotation and prediction API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080", env = "AFFORD_ADDR")]
        addr: String,
        /// Static files for the annotation UI.
        #[arg(long)]
        ui: Option<PathBuf>,
    },
    /// Print the effective configuration.
    Config,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

fn parse_point(s: &str) -> Result<Point, String> {
    let (x, y) = s.split_once(',').ok_or("expected x,y")?;
    let p = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}"));
    Ok(Point::new(p(x)?, p(y)?))
}

fn resolve(cli: &Cli) -> Result<Resolved> {
    let file = match &cli.config {
        Some(p) => Some(p.clone()),
        None => Some(PathBuf::from(DEFAULT_CONFIG)).filter(|p| p.exists()),
    };
    let mut r = config::load(file.as_deref(), std::env::vars(), &cli.sets).map_err(|e| UsageError(format!("{e:#}")))?;
    let c = &mut r.config;
    match &cli.command {
        Command::Mine { featurizer_seed, .. } => set(&mut c.seeds.featurizer, featurizer_seed),
        Command::Cluster { k, seed } => {
            set(&mut c.model.k, k);
            set(&mut c.seeds.cluster, seed);
        }
        Command::TrainClassifier(t) => {
            set(&mut c.train.classifier_epochs, &t.epochs);
            apply_train(c, t);
            set(&mut c.seeds.classifier, &t.seed);
        }
        Command::TrainVae { train, lambda, latent_dim } => {
            set(&mut c.train.vae_epochs, &train.epochs);
            apply_train(c, train);
            set(&mut c.seeds.vae, &train.seed);
            set(&mut c.model.lambda, lambda);
            set(&mut c.model.latent_dim, latent_dim);
        }
        Command::Score { m, delta, .. } => {
            set(&mut c.model.m, m);
            if delta.is_some() {
                c.model.delta = *delta;
            }
        }
        Command::Evaluate { test_show, m, seed } => {
            set(&mut c.eval.test_show, test_show);
            set(&mut c.model.m, m);
            set(&mut c.seeds.negatives, seed);
        }
        _ => {}
    }
    c.validate().map_err(|e| UsageError(e.to_string()))?;
    Ok(r)
}

fn set<T: Clone>(slot: &mut T, value: &Option<T>) {
    if let Some(v) = value {
        *slot = v.clone();
    }
}

fn apply_train(c: &mut config::Config, t: &TrainArgs) {
    set(&mut c.train.batch_size, &t.batch_size);
    set(&mut c.train.lr, &t.lr);
    set(&mut c.model.hidden, &t.hidden);
}

fn print<T: Serialize>(value: &T) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn read_pose(path: &Path) -> Result<Pose> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing pose from {}", path.display()))
}

pub fn run(cli: Cli) -> Result<()> {
    if let Command::MakeFixture { out, seed } = &cli.command {
        let summary = pipeline::make_fixture(out, *seed)?;
        return print(&summary);
    }
    let r = resolve(&cli)?;
    match cli.command {
        Command::MakeFixture { .. } => unreachable!("handled above"),
        Command::Mine { auto_accept, .. } => print(&pipeline::mine(&r, auto_accept)?),
        Command::Cluster { .. } => print(&pipeline::cluster(&r)?),
        Command::TrainClassifier(_) => print(&pipeline::train_classifier_cmd(&r)?),
        Command::TrainVae { .. } => print(&pipeline::train_vae_cmd(&r)?),
        Command::Generate {
            scene,
            point,
            samples,
            seed,
            out,
        } => {
            if samples == 0 {
                return Err(UsageError("--samples must be at least 1".into()).into());
            }
            let data = Data::load(&r)?;
            let models = Models::load(&r)?;
            let seed = seed.unwrap_or(r.config.seeds.generate);
            let result = pipeline::generate(&data, &models, &scene, point, samples, seed)?;
            match out {
                Some(path) => {
                    let json = serde_json::to_string_pretty(&result)?;
                    affordance::dataset::io::write_atomic(&path, format!("{json}\n").as_bytes())?;
                    Ok(())
                }
                None => print(&result),
            }
        }
        Command::Score {
            record, scene, pose, seed, ..
        } => {
            let data = Data::load(&r)?;
            let models = Models::load(&r)?;
            let seed = seed.unwrap_or(r.config.seeds.generate);
            let (scene, pose) = match (record, scene, pose) {
                (Some(id), _, _) => {
                    let rec = data.dataset.get(id).with_context(|| format!("record {id} is not in the dataset"))?;
                    (rec.scene_id.clone(), rec.pose.clone())
                }
                (None, Some(scene), Some(path)) => (scene, read_pose(&path)?),
                _ => return Err(UsageError("pass --record, or --scene with --pose".into()).into()),
            };
            print(&pipeline::score(&data, &models, &scene, &pose, r.config.model.m, seed)?)
        }
        Command::Evaluate { .. } => {
            let out = pipeline::evaluate(&r)?;
            print!("{}", out.report.to_table());
            println!("delta              {:.4}", out.delta);
            println!("accuracy at delta  {:.4}", out.accuracy_at_delta);
            Ok(())
        }
        Command::Serve { addr, ui } => {
            let state = serve::AppState::open(&r)?;
            tokio::runtime::Runtime::new()?.block_on(serve::serve(state, &addr, ui))
        }
        Command::Config => {
            print!("{}", r.config.to_toml());
            Ok(())
        }
    }
}
