//! The mining pass over a corpus of shots: find empty frames, transfer poses
//! into them, and emit hypotheses with cached crop features.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{accumulate_flow, filter_empty, global_match, transfer_pose, FlowField, ScoreTable, Scorers, TargetFrame, Thresholds};
use crate::dataset::{AffordanceRecord, Source, Status};
use crate::error::{Error, Result};
use crate::features::{make_crops, Featurizer, SceneImage};
use crate::pose::Pose;

/// Corpus description, read from JSON. Paths are relative to the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub fps: f64,
    /// Score sidecar for every frame.
    pub scores: String,
    pub shots: Vec<Shot>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shot {
    pub id: String,
    pub show: String,
    pub frames: Vec<Frame>,
    /// `flows[i]` carries frame `i` onto frame `i + 1`.
    pub flows: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub id: u64,
    pub image: String,
    /// Poses reported by the person detector.
    #[serde(default)]
    pub poses: Vec<Pose>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MiningConfig {
    pub thresholds: Thresholds,
    /// Occupied frames up to this many seconds before an empty frame feed
    /// local transfer.
    pub window_seconds: f64,
    pub global_top_k: usize,
    pub global_min_similarity: f64,
}

impl Default for MiningConfig {
    fn default() -> Self {
        Self {
            thresholds: Thresholds::default(),
            window_seconds: 5.0,
            global_top_k: 2,
            global_min_similarity: 0.95,
        }
    }
}

impl Corpus {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let c: Self = serde_json::from_str(&text).map_err(|e| Error::format(path, e.line(), e.to_string()))?;
        for s in &c.shots {
            if s.frames.len() != s.flows.len() + 1 && !s.frames.is_empty() {
                return Err(Error::format(
                    path,
                    0,
                    format!("shot {}: {} frames need {} flows", s.id, s.frames.len(), s.frames.len() - 1),
                ));
            }
        }
        Ok(c)
    }
}

/// Frames on either side of `center` within the window, clipped to the shot.
pub fn local_window(center: usize, window_frames: usize, shot_len: usize) -> std::ops::RangeInclusive<usize> {
    center.saturating_sub(window_frames)..=(center + window_frames).min(shot_len.saturating_sub(1))
}

#[derive(Clone, Copy)]
struct Located<'a> {
    shot: &'a Shot,
    index: usize,
}

/// Runs the pass. Record image paths are written relative to `dataset_dir`.
///
/// Local transfer only uses occupied frames that precede the empty frame,
/// since flows are given forward in time.
pub fn mine(corpus_path: &Path, config: &MiningConfig, featurizer: &dyn Featurizer, dataset_dir: &Path) -> Result<Vec<AffordanceRecord>> {
    let corpus = Corpus::read(corpus_path)?;
    let root = corpus_path.parent().unwrap_or(Path::new("."));
    let scores = ScoreTable::read(&root.join(&corpus.scores))?;

    let mut by_id: HashMap<u64, Located> = HashMap::new();
    let mut all = Vec::new();
    for shot in &corpus.shots {
        for (index, f) in shot.frames.iter().enumerate() {
            if by_id.insert(f.id, Located { shot, index }).is_some() {
                return Err(Error::format(corpus_path, 0, format!("duplicate frame id {}", f.id)));
            }
            all.push(f.id);
        }
    }
    let (face, person, emptiness) = (scores.face(), scores.person(), scores.emptiness());
    let scorers = Scorers {
        face: &face,
        person: &person,
        emptiness: &emptiness,
    };
    let empty = filter_empty(&all, &scorers, &config.thresholds)?;
    let empty_set: std::collections::HashSet<u64> = empty.iter().copied().collect();
    log::info!("{} of {} frames pass the empty-scene filter", empty.len(), all.len());

    let needed: Vec<u64> = all
        .iter()
        .copied()
        .filter(|id| {
            let loc = &by_id[id];
            empty_set.contains(id) || !loc.shot.frames[loc.index].poses.is_empty()
        })
        .collect();
    let images: HashMap<u64, SceneImage> = needed
        .par_iter()
        .map(|&id| {
            let loc = &by_id[&id];
            Ok((id, SceneImage::open(&root.join(&loc.shot.frames[loc.index].image))?))
        })
        .collect::<Result<_>>()?;
    let target_of = |id: u64, img: &SceneImage| -> Result<TargetFrame> {
        let loc = &by_id[&id];
        let abs = std::path::absolute(root.join(&loc.shot.frames[loc.index].image)).map_err(|e| Error::io(root, e))?;
        let base = std::path::absolute(dataset_dir).map_err(|e| Error::io(dataset_dir, e))?;
        let rel = pathdiff::diff_paths(&abs, &base).unwrap_or(abs);
        Ok(TargetFrame {
            scene_id: format!("{}/{:06}", loc.shot.id, id),
            show: loc.shot.show.clone(),
            image: portable(&rel),
            width: img.width(),
            height: img.height(),
        })
    };

    let window = (config.window_seconds * corpus.fps).round().max(0.0) as usize;
    let mut records = Vec::new();
    let mut flow_cache: HashMap<PathBuf, FlowField> = HashMap::new();
    for &e in &empty {
        let loc = &by_id[&e];
        let img = &images[&e];
        let target = target_of(e, img)?;
        for o in local_window(loc.index, window, loc.shot.frames.len()) {
            let frame = &loc.shot.frames[o];
            if o >= loc.index || frame.poses.is_empty() {
                continue;
            }
            let mut flows = Vec::with_capacity(loc.index - o);
            for name in &loc.shot.flows[o..loc.index] {
                let path = root.join(name);
                if !flow_cache.contains_key(&path) {
                    let f = FlowField::read(&path)?;
                    flow_cache.insert(path.clone(), f);
                }
                flows.push(flow_cache[&path].clone());
            }
            let field = accumulate_flow(&flows)?;
            for pose in &frame.poses {
                records.push(transfer_pose(pose, &field, &target, Source::Local, 0)?);
            }
        }
    }

    let whole = |img: &SceneImage| -> Result<Vec<f64>> {
        let spec = make_crops(img.width(), img.height(), crate::pose::Point::new(0.0, 0.0))?;
        featurizer.featurize(img, &spec.whole)
    };
    let mut empty_features = Vec::with_capacity(empty.len());
    for &e in &empty {
        empty_features.push((e, whole(&images[&e])?));
    }
    for &f in &all {
        let loc = &by_id[&f];
        let frame = &loc.shot.frames[loc.index];
        if frame.poses.is_empty() || empty_set.contains(&f) {
            continue;
        }
        let others: Vec<(u64, Vec<f64>)> = empty_features
            .iter()
            .filter(|(e, _)| by_id[e].shot.id != loc.shot.id)
            .cloned()
            .collect();
        if others.is_empty() {
            continue;
        }
        let query = whole(&images[&f])?;
        for m in global_match(&query, &others, config.global_top_k)? {
            if m.similarity < config.global_min_similarity {
                continue;
            }
            let img = &images[&m.frame];
            let target = target_of(m.frame, img)?;
            let identity = FlowField::zeros(img.width(), img.height())?;
            for pose in &frame.poses {
                records.push(transfer_pose(pose, &identity, &target, Source::Global, 0)?);
            }
        }
    }

    for (i, r) in records.iter_mut().enumerate() {
        r.id = i as u64;
    }
    records.sort_by(|a, b| a.scene_id.cmp(&b.scene_id).then(a.id.cmp(&b.id)));
    records.par_iter_mut().try_for_each(|r| -> Result<()> {
        let frame: u64 = r.scene_id.rsplit('/').next().and_then(|s| s.parse().ok()).expect("scene ids end in a frame id");
        let img = &images[&frame];
        if img_contains(img, r) {
            r.features = Some(featurizer.featurize_point(img, r.anchor)?);
        }
        Ok(())
    })?;
    Ok(records)
}

fn img_contains(img: &SceneImage, r: &AffordanceRecord) -> bool {
    let a = r.anchor;
    a.x >= 0.0 && a.y >= 0.0 && a.x < f64::from(img.width()) && a.y < f64::from(img.height())
}

fn portable(p: &Path) -> String {
    p.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

/// Stand-in for the manual pass: in-frame hypotheses are accepted, the rest
/// rejected. Returns (accepted, rejected).
pub fn auto_annotate(records: &mut [AffordanceRecord]) -> (usize, usize) {
    let mut counts = (0, 0);
    for r in records.iter_mut().filter(|r| r.status == Status::Hypothesis) {
        if r.out_of_frame || r.features.is_none() {
            r.status = Status::Rejected;
            counts.1 += 1;
        } else {
            r.status = Status::Accepted;
            counts.0 += 1;
        }
    }
    counts
}
