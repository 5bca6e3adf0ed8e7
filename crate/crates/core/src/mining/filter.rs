use std::collections::HashMap;
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The three cascade scores for one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameScore {
    pub frame: u64,
    /// Side length of the largest detected face, in pixels.
    pub face: f64,
    /// Highest person-detection confidence.
    pub person: f64,
    /// Probability that the frame shows an empty scene.
    pub emptiness: f64,
}

impl FrameScore {
    pub fn validate(&self) -> Result<()> {
        let ok = self.face.is_finite()
            && self.person.is_finite()
            && self.face >= 0.0
            && self.person >= 0.0
            && (0.0..=1.0).contains(&self.emptiness);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidFeature(format!("frame {} has out-of-range scores {self:?}", self.frame)))
        }
    }
}

/// One stage of the cascade. `None` means the scorer has no value for the frame.
pub trait Scorer: Send + Sync {
    fn score(&self, frame: u64) -> Option<f64>;
}

impl<F: Fn(u64) -> Option<f64> + Send + Sync> Scorer for F {
    fn score(&self, frame: u64) -> Option<f64> {
        self(frame)
    }
}

pub struct Scorers<'a> {
    pub face: &'a dyn Scorer,
    pub person: &'a dyn Scorer,
    pub emptiness: &'a dyn Scorer,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// Largest face must be smaller than this many pixels.
    pub face: f64,
    /// Person confidence must be below this.
    pub person: f64,
    /// Emptiness probability must exceed this.
    pub empty: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            face: 4.0,
            person: 0.5,
            empty: 0.5,
        }
    }
}

impl Thresholds {
    pub fn passes(&self, s: &FrameScore) -> bool {
        s.face < self.face && s.person < self.person && s.emptiness > self.empty
    }
}

pub fn score_frame(frame: u64, scorers: &Scorers) -> Result<FrameScore> {
    let get = |s: &dyn Scorer, which| s.score(frame).ok_or(Error::IncompleteScoring { frame, which });
    let score = FrameScore {
        frame,
        face: get(scorers.face, "face")?,
        person: get(scorers.person, "person")?,
        emptiness: get(scorers.emptiness, "emptiness")?,
    };
    score.validate()?;
    Ok(score)
}

/// Frames passing face < tau_face, person < tau_person and emptiness >
/// tau_empty, in input order.
pub fn filter_empty(frames: &[u64], scorers: &Scorers, thresholds: &Thresholds) -> Result<Vec<u64>> {
    let mut out = Vec::new();
    for &f in frames {
        if thresholds.passes(&score_frame(f, scorers)?) {
            out.push(f);
        }
    }
    Ok(out)
}

/// Frames picked for relabeling and the corrected training subset built from
/// the labels they received.
#[derive(Debug, Clone, PartialEq)]
pub struct Refresh {
    pub selected: Vec<u64>,
    /// `(frame, is_empty)` for every selected frame that got a label.
    pub corrected: Vec<(u64, bool)>,
}

/// Takes the `top_n` highest-scoring predictions (ties by lower frame id),
/// looks up their manual labels, and returns the relabeled subset for the
/// next round of emptiness-classifier training.
pub fn hard_negative_refresh(predictions: &[(u64, f64)], top_n: usize, labels: impl Fn(u64) -> Option<bool>) -> Refresh {
    let mut ranked = predictions.to_vec();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    if top_n > ranked.len() {
        log::warn!("requested top {top_n} but only {} predictions exist", ranked.len());
    }
    ranked.truncate(top_n);
    let selected: Vec<u64> = ranked.iter().map(|p| p.0).collect();
    let corrected = selected.iter().filter_map(|&f| labels(f).map(|l| (f, l))).collect();
    Refresh { selected, corrected }
}

/// Precomputed scores read from a sidecar file; stands in for the face,
/// person and emptiness models.
///
/// File layout (little-endian): magic `AFSC`, u32 version (1), u64 count,
/// then per frame a u64 id and three f64 scores (face, person, emptiness).
/// NaN marks a score the model did not produce.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreTable {
    rows: HashMap<u64, [f64; 3]>,
}

const SIDECAR_MAGIC: &[u8; 4] = b"AFSC";

impl ScoreTable {
    pub fn insert(&mut self, frame: u64, face: f64, person: f64, emptiness: f64) {
        self.rows.insert(frame, [face, person, emptiness]);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    fn column(&self, frame: u64, i: usize) -> Option<f64> {
        self.rows.get(&frame).map(|r| r[i]).filter(|v| !v.is_nan())
    }

    pub fn face(&self) -> impl Scorer + '_ {
        move |f| self.column(f, 0)
    }

    pub fn person(&self) -> impl Scorer + '_ {
        move |f| self.column(f, 1)
    }

    pub fn emptiness(&self) -> impl Scorer + '_ {
        move |f| self.column(f, 2)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut ids: Vec<u64> = self.rows.keys().copied().collect();
        ids.sort_unstable();
        let mut out = Vec::with_capacity(16 + ids.len() * 32);
        out.extend_from_slice(SIDECAR_MAGIC);
        out.write_u32::<LittleEndian>(1).unwrap();
        out.write_u64::<LittleEndian>(ids.len() as u64).unwrap();
        for id in ids {
            out.write_u64::<LittleEndian>(id).unwrap();
            for v in self.rows[&id] {
                out.write_f64::<LittleEndian>(v).unwrap();
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |m: String| Error::format(path, 0, m);
        let mut r = bytes;
        if r.len() < 16 || &r[..4] != SIDECAR_MAGIC {
            return Err(bad("not a score sidecar".into()));
        }
        r = &r[4..];
        let version = r.read_u32::<LittleEndian>().map_err(|e| bad(e.to_string()))?;
        if version != 1 {
            return Err(bad(format!("unsupported sidecar version {version}")));
        }
        let count = r.read_u64::<LittleEndian>().map_err(|e| bad(e.to_string()))?;
        if r.len() as u64 != count * 32 {
            return Err(bad(format!("expected {count} rows, found {} bytes", r.len())));
        }
        let mut table = ScoreTable::default();
        for _ in 0..count {
            let id = r.read_u64::<LittleEndian>().unwrap();
            let mut v = [0.0; 3];
            for x in &mut v {
                *x = r.read_f64::<LittleEndian>().unwrap();
            }
            if table.rows.insert(id, v).is_some() {
                return Err(bad(format!("duplicate frame {id}")));
            }
        }
        Ok(table)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng as _;

    fn table(n: u64, seed: u64) -> ScoreTable {
        let mut r = rng::seeded(seed);
        let mut t = ScoreTable::default();
        for f in 0..n {
            t.insert(f, r.random_range(0.0..10.0), r.random_range(0.0..1.0), r.random_range(0.0..1.0));
        }
        t
    }

    fn run(t: &ScoreTable, frames: &[u64], th: &Thresholds) -> Result<Vec<u64>> {
        let (face, person, emptiness) = (t.face(), t.person(), t.emptiness());
        let s = Scorers {
            face: &face,
            person: &person,
            emptiness: &emptiness,
        };
        filter_empty(frames, &s, th)
    }

    #[test]
    fn single_frame_cases() {
        let mut t = ScoreTable::default();
        t.insert(0, 0.0, 0.0, 1.0);
        t.insert(1, 0.0, 0.0, 0.0);
        t.insert(2, f64::NAN, 0.0, 1.0);
        let th = Thresholds::default();
        assert_eq!(run(&t, &[0, 1], &th).unwrap(), vec![0]);
        assert!(matches!(run(&t, &[2], &th), Err(Error::IncompleteScoring { frame: 2, which: "face" })));
        assert!(matches!(run(&t, &[9], &th), Err(Error::IncompleteScoring { frame: 9, .. })));
    }

    #[test]
    fn hundred_frames_match_the_conjunction() {
        let t = table(100, 4);
        let frames: Vec<u64> = (0..100).rev().collect();
        let th = Thresholds {
            face: 5.0,
            person: 0.6,
            empty: 0.3,
        };
        let expected: Vec<u64> = frames
            .iter()
            .copied()
            .filter(|f| {
                let r = t.rows[f];
                r[0] < 5.0 && r[1] < 0.6 && r[2] > 0.3
            })
            .collect();
        assert!(!expected.is_empty());
        assert_eq!(run(&t, &frames, &th).unwrap(), expected);
    }

    #[test]
    fn thresholds_are_monotone() {
        let t = table(200, 5);
        let frames: Vec<u64> = (0..200).collect();
        let base = Thresholds::default();
        let n = run(&t, &frames, &base).unwrap();
        for k in 1..10 {
            let stricter_empty = Thresholds {
                empty: base.empty + 0.05 * k as f64,
                ..base
            };
            let stricter_face = Thresholds {
                face: base.face - 0.4 * k as f64,
                ..base
            };
            for th in [stricter_empty, stricter_face] {
                let m = run(&t, &frames, &th).unwrap();
                assert!(m.iter().all(|f| n.contains(f)));
            }
        }
    }

    #[test]
    fn refresh_matches_sort_oracle() {
        let mut r = rng::seeded(8);
        let preds: Vec<(u64, f64)> = (0..50).map(|i| (i, f64::from(r.random_range(0..10u8)))).collect();
        let labels = |f: u64| (f % 3 != 0).then_some(f % 2 == 0);
        let got = hard_negative_refresh(&preds, 12, labels);
        let mut oracle = preds.clone();
        oracle.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let expect: Vec<u64> = oracle[..12].iter().map(|p| p.0).collect();
        assert_eq!(got.selected, expect);
        assert!(got.corrected.iter().all(|&(f, l)| f % 3 != 0 && l == (f % 2 == 0)));

        let all = hard_negative_refresh(&preds, 500, labels);
        assert_eq!(all.selected.len(), 50);
        let decreasing: Vec<(u64, f64)> = (0..10).map(|i| (i, 10.0 - i as f64)).collect();
        assert_eq!(hard_negative_refresh(&decreasing, 4, labels).selected, vec![0, 1, 2, 3]);
    }

    #[test]
    fn sidecar_round_trip() {
        let mut t = table(30, 6);
        t.insert(99, f64::NAN, 0.5, 0.5);
        let bytes = t.to_bytes();
        let back = ScoreTable::from_bytes(&bytes, Path::new("s")).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.face().score(99), None);
        assert!(ScoreTable::from_bytes(&bytes[..bytes.len() - 1], Path::new("s")).is_err());
    }
}
