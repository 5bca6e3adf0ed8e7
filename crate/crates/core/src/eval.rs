//! Evaluation: top-k pose-class accuracy and precision/recall of the
//! plausibility score.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Classifier, ClassifierExample};

/// Position of `label` when classes are ranked by descending probability,
/// ties broken by lower class id.
fn rank_of(probs: &[f64], label: usize) -> usize {
    let p = probs[label];
    probs
        .iter()
        .enumerate()
        .filter(|&(j, &q)| q > p || (q == p && j < label))
        .count()
}

/// Accuracy@k for k = 1..=k_max.
pub fn topk_accuracies(probs: &[Vec<f64>], labels: &[usize], k_max: usize) -> Result<Vec<f64>> {
    if probs.is_empty() {
        return Err(Error::EmptyInput("test set"));
    }
    if probs.len() != labels.len() {
        return Err(Error::Shape(format!("{} score rows for {} labels", probs.len(), labels.len())));
    }
    let mut hits = vec![0usize; k_max];
    for (row, &label) in probs.iter().zip(labels) {
        if label >= row.len() {
            return Err(Error::InvalidLabel {
                label,
                classes: row.len(),
            });
        }
        for h in hits.iter_mut().skip(rank_of(row, label)) {
            *h += 1;
        }
    }
    Ok(hits.into_iter().map(|h| h as f64 / probs.len() as f64).collect())
}

pub fn evaluate_topk(classifier: &Classifier, examples: &[ClassifierExample], k_max: usize) -> Result<Vec<f64>> {
    let probs = examples
        .iter()
        .map(|e| classifier.classify(&e.crops))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<usize> = examples.iter().map(|e| e.class).collect();
    topk_accuracies(&probs, &labels, k_max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    /// One point per distinct score, loosest threshold last.
    pub points: Vec<PrPoint>,
    pub average_precision: f64,
    pub positives: usize,
    pub negatives: usize,
}

impl PrCurve {
    pub fn prevalence(&self) -> f64 {
        self.positives as f64 / (self.positives + self.negatives) as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,precision,recall\n");
        for p in &self.points {
            let _ = writeln!(out, "{},{},{}", p.threshold, p.precision, p.recall);
        }
        out
    }
}

/// Precision/recall sweep over distances (lower = more plausible): at
/// threshold `t` every record with distance <= t is predicted positive.
/// Average precision is the step integral sum of (R_i - R_{i-1}) * P_i.
pub fn evaluate_pr(distances: &[f64], labels: &[bool]) -> Result<PrCurve> {
    if distances.len() != labels.len() {
        return Err(Error::Shape(format!("{} scores for {} labels", distances.len(), labels.len())));
    }
    if distances.iter().any(|d| !d.is_finite()) {
        return Err(Error::InvalidFeature("non-finite plausibility score".into()));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::UndefinedPrecision(format!(
            "{positives} positives and {negatives} negatives; both classes are required"
        )));
    }
    let mut order: Vec<usize> = (0..distances.len()).collect();
    order.sort_by(|&a, &b| distances[a].total_cmp(&distances[b]));

    let (mut tp, mut fp) = (0usize, 0usize);
    let mut points = Vec::new();
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    let mut i = 0;
    while i < order.len() {
        let t = distances[order[i]];
        while i < order.len() && distances[order[i]] == t {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let precision = tp as f64 / (tp + fp) as f64;
        let recall = tp as f64 / positives as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        points.push(PrPoint {
            threshold: t,
            precision,
            recall,
        });
    }
    Ok(PrCurve {
        points,
        average_precision: ap,
        positives,
        negatives,
    })
}

/// Plausibility threshold with the best F1 on a validation sweep. The value
/// returned sits halfway to the next distinct score so that the strict test
/// `distance < delta` admits exactly the records at or below the chosen
/// sweep threshold.
pub fn select_delta(distances: &[f64], labels: &[bool]) -> Result<f64> {
    let curve = evaluate_pr(distances, labels)?;
    let f1 = |p: &PrPoint| {
        if p.precision + p.recall == 0.0 {
            0.0
        } else {
            2.0 * p.precision * p.recall / (p.precision + p.recall)
        }
    };
    let mut best = 0;
    for (i, p) in curve.points.iter().enumerate() {
        if f1(p) > f1(&curve.points[best]) {
            best = i;
        }
    }
    let t = curve.points[best].threshold;
    Ok(match curve.points.get(best + 1) {
        Some(next) => 0.5 * (t + next.threshold),
        None => t + t.abs().max(1.0) * 1e-9,
    })
}

/// Both evaluation protocols for one test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Accuracy@k for k = 1..=5.
    pub topk: Vec<f64>,
    pub pr: PrCurve,
}

impl EvalReport {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<8}{:>10}", "top-k", "accuracy");
        for (k, a) in self.topk.iter().enumerate() {
            let _ = writeln!(out, "{:<8}{:>9.1}%", format!("top-{}", k + 1), 100.0 * a);
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "positives          {}", self.pr.positives);
        let _ = writeln!(out, "negatives          {}", self.pr.negatives);
        let _ = writeln!(out, "prevalence         {:.4}", self.pr.prevalence());
        let _ = writeln!(out, "average precision  {:.4}", self.pr.average_precision);
        out
    }
}
