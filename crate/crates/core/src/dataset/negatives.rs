//! Implausible poses for the plausibility test set.
//!
//! Each negative perturbs one positive with one of four families:
//! extreme rescaling (x0.2 or x5 about the anchor), translation to a distant
//! anchor in the same frame, an upside-down flip about the anchor row, or the
//! center of a different pose class placed at the same anchor and size.

use rand::seq::SliceRandom;
use rand::Rng as _;

use super::{AffordanceRecord, Perturbation, Source, Status};
use crate::clustering::{assign_class, PoseVocabulary};
use crate::error::{Error, Result};
use crate::pose::{decode, Point, Pose, ScaleDeform, JOINT_COUNT};
use crate::rng;

/// Negatives per positive in the reference test set (9572 / 3872).
pub const DEFAULT_NEGATIVE_RATIO: f64 = 9572.0 / 3872.0;

/// Number of negatives produced for `positives` positives.
pub fn negative_count(positives: usize, per_positive: f64) -> usize {
    (per_positive * positives as f64).round() as usize
}

/// Returns `negative_count(positives.len(), per_positive)` negatives with ids
/// starting at `first_id`. Sources are visited in a seeded shuffled order,
/// cycling when more negatives than positives are requested.
pub fn synthesize_negatives(
    positives: &[AffordanceRecord],
    vocab: &PoseVocabulary,
    seed: u64,
    per_positive: f64,
    first_id: u64,
) -> Result<Vec<AffordanceRecord>> {
    if !(per_positive >= 0.0) || !per_positive.is_finite() {
        return Err(Error::Config(format!("negatives per positive must be >= 0, got {per_positive}")));
    }
    let count = negative_count(positives.len(), per_positive);
    if count == 0 {
        return Ok(Vec::new());
    }
    let mut order: Vec<usize> = (0..positives.len()).collect();
    order.shuffle(&mut rng::stream(seed, 1));
    let mut r = rng::stream(seed, 2);
    (0..count)
        .map(|i| {
            let src = &positives[order[i % order.len()]];
            let family = match r.random_range(0..4) {
                0 => Perturbation::ExtremeScale,
                1 => Perturbation::FarAnchor,
                2 => Perturbation::VerticalFlip,
                _ => Perturbation::ClassSwap,
            };
            perturb(src, vocab, family, &mut r, first_id + i as u64)
        })
        .collect()
}

fn perturb(
    src: &AffordanceRecord,
    vocab: &PoseVocabulary,
    family: Perturbation,
    r: &mut rng::Rng,
    id: u64,
) -> Result<AffordanceRecord> {
    let anchor = src.anchor;
    let (mut family, mut anchor_out) = (family, anchor);
    let mut pose = match family {
        Perturbation::ExtremeScale => {
            let factor = if r.random_bool(0.5) { 0.2 } else { 5.0 };
            src.pose.scaled_about(anchor, factor)?
        }
        Perturbation::FarAnchor => {
            anchor_out = far_anchor(anchor, src.image_size, r);
            src.pose.translated(anchor_out.x - anchor.x, anchor_out.y - anchor.y)
        }
        Perturbation::VerticalFlip => flip(&src.pose, anchor)?,
        Perturbation::ClassSwap if vocab.len() >= 2 => {
            let own = match src.class_id {
                Some(c) if c < vocab.len() => c,
                _ => assign_class(&src.pose, vocab)?,
            };
            let mut other = r.random_range(0..vocab.len() - 1);
            if other >= own {
                other += 1;
            }
            let center = vocab.center(other).expect("class in range");
            let bb = src.pose.bbox();
            let sd = ScaleDeform::new(bb.height(), bb.width() / center.bbox().width(), vec![0.0; 2 * JOINT_COUNT])?;
            decode(&sd, center, anchor)?
        }
        Perturbation::ClassSwap => {
            family = Perturbation::VerticalFlip;
            flip(&src.pose, anchor)?
        }
    };
    if pose.euclidean_distance(&src.pose) == 0.0 {
        family = Perturbation::ExtremeScale;
        anchor_out = anchor;
        pose = src.pose.scaled_about(anchor, 5.0)?;
    }
    let [w, h] = src.image_size;
    Ok(AffordanceRecord {
        id,
        anchor: anchor_out,
        out_of_frame: !super::in_frame(&pose, w, h),
        pose,
        class_id: None,
        source: Source::Synthetic,
        status: Status::Accepted,
        negative: true,
        derived_from: Some(src.id),
        perturbation: Some(family),
        adjustment: None,
        features: if anchor_out == anchor { src.features.clone() } else { None },
        ..src.clone()
    })
}

fn flip(pose: &Pose, anchor: Point) -> Result<Pose> {
    Pose::new(pose.joints().iter().map(|p| Point::new(p.x, 2.0 * anchor.y - p.y)).collect())
}

/// A uniformly drawn in-frame point at least half the frame height away, or
/// the farthest corner if none is found quickly.
fn far_anchor(from: Point, [w, h]: [u32; 2], r: &mut rng::Rng) -> Point {
    let (w, h) = (f64::from(w), f64::from(h));
    let min_dist = 0.5 * h;
    for _ in 0..64 {
        let p = Point::new(r.random_range(0.0..w), r.random_range(0.0..h));
        if p.distance(from) >= min_dist {
            return p;
        }
    }
    [Point::new(0.0, 0.0), Point::new(w - 1.0, 0.0), Point::new(0.0, h - 1.0), Point::new(w - 1.0, h - 1.0)]
        .into_iter()
        .max_by(|a, b| a.distance(from).total_cmp(&b.distance(from)))
        .expect("four corners")
}
