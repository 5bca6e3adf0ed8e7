//! Pose vocabulary construction by k-medoids under the procrustes distance.

use std::fmt::Write as _;

use rand::Rng as _;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::pose::{normalize, schema_hash, shape_distance, NormalizedPose, Point, Pose, JOINT_COUNT};
use crate::rng;

/// Dense symmetric distance matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let d = f(i, j);
                data[i * n + j] = d;
                data[j * n + i] = d;
            }
        }
        Self { n, data }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }
}

/// All pairwise procrustes distances. Rows are computed in parallel; each
/// unordered pair is evaluated once and mirrored, so the result is exactly
/// symmetric.
pub fn pairwise_distances(poses: &[Pose]) -> Result<DistanceMatrix> {
    if poses.is_empty() {
        return Err(Error::EmptyInput("no poses to compare"));
    }
    let n = poses.len();
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            ((i + 1)..n)
                .map(|j| shape_distance(poses[i].joints(), poses[j].joints()))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let mut data = vec![0.0; n * n];
    for (i, row) in upper.iter().enumerate() {
        for (off, &d) in row.iter().enumerate() {
            let j = i + 1 + off;
            data[i * n + j] = d;
            data[j * n + i] = d;
        }
    }
    Ok(DistanceMatrix { n, data })
}

/// Outcome of [`k_medoids`]. Class `c` is the cluster whose medoid is
/// `medoids[c]`; medoids are sorted by sample index.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub medoids: Vec<usize>,
    pub assignment: Vec<usize>,
    pub cost: f64,
    /// Objective after every assignment pass, in order.
    pub cost_history: Vec<f64>,
}

const MAX_ROUNDS: usize = 1000;

fn nearest(d: &DistanceMatrix, medoids: &[usize], point: usize) -> usize {
    // A medoid always owns itself, even when duplicated points tie.
    if let Some(c) = medoids.iter().position(|&m| m == point) {
        return c;
    }
    let mut best = 0;
    for (c, &m) in medoids.iter().enumerate().skip(1) {
        if d.get(point, m) < d.get(point, medoids[best]) {
            best = c;
        }
    }
    best
}

fn assign(d: &DistanceMatrix, medoids: &[usize]) -> (Vec<usize>, f64) {
    let assignment: Vec<usize> = (0..d.len()).map(|p| nearest(d, medoids, p)).collect();
    let cost = assignment
        .iter()
        .enumerate()
        .map(|(p, &c)| d.get(p, medoids[c]))
        .sum();
    (assignment, cost)
}

/// Greedy farthest-point seeding; the seeded RNG picks only the first medoid.
fn farthest_point_init(d: &DistanceMatrix, k: usize, seed: u64) -> Vec<usize> {
    let n = d.len();
    let mut rng = rng::seeded(seed);
    let mut medoids = vec![rng.random_range(0..n)];
    let mut gap: Vec<f64> = d.row(medoids[0]).to_vec();
    while medoids.len() < k {
        let mut best: Option<usize> = None;
        for p in 0..n {
            if medoids.contains(&p) {
                continue;
            }
            if best.is_none_or(|b| gap[p] > gap[b]) {
                best = Some(p);
            }
        }
        let next = best.expect("k <= n leaves a candidate");
        medoids.push(next);
        for p in 0..n {
            gap[p] = gap[p].min(d.get(p, next));
        }
    }
    medoids
}

/// Replaces each medoid by the member minimizing the within-cluster distance
/// sum. The incumbent is kept on ties. Returns whether anything moved.
fn update_medoids(d: &DistanceMatrix, medoids: &mut [usize], assignment: &[usize]) -> bool {
    let mut changed = false;
    for (c, medoid) in medoids.iter_mut().enumerate() {
        let members: Vec<usize> = (0..d.len()).filter(|&p| assignment[p] == c).collect();
        let within = |m: usize| members.iter().map(|&p| d.get(p, m)).sum::<f64>();
        let mut best = *medoid;
        let mut best_cost = within(best);
        for &cand in &members {
            let cost = within(cand);
            if cost < best_cost {
                best = cand;
                best_cost = cost;
            }
        }
        if best != *medoid {
            *medoid = best;
            changed = true;
        }
    }
    changed
}

/// Best single medoid/non-medoid exchange, if it lowers the objective.
fn best_swap(d: &DistanceMatrix, medoids: &[usize]) -> Option<(usize, usize)> {
    let n = d.len();
    let k = medoids.len();
    if k == n {
        return None;
    }
    let mut near = vec![0.0; n];
    let mut second = vec![f64::INFINITY; n];
    let mut owner = vec![0usize; n];
    for p in 0..n {
        let c = nearest(d, medoids, p);
        owner[p] = c;
        near[p] = d.get(p, medoids[c]);
        for (o, &m) in medoids.iter().enumerate() {
            if o != c {
                second[p] = second[p].min(d.get(p, m));
            }
        }
    }
    let mut best: Option<(f64, usize, usize)> = None;
    for x in (0..n).filter(|x| !medoids.contains(x)) {
        let mut shared = 0.0;
        let mut per_medoid = vec![0.0; k];
        for o in 0..n {
            let dxo = d.get(x, o);
            if dxo < near[o] {
                shared += dxo - near[o];
            } else {
                per_medoid[owner[o]] += dxo.min(second[o]) - near[o];
            }
        }
        for (c, extra) in per_medoid.iter().enumerate() {
            let delta = shared + extra;
            if delta < -1e-12 && best.is_none_or(|(b, _, _)| delta < b) {
                best = Some((delta, c, x));
            }
        }
    }
    best.map(|(_, c, x)| (c, x))
}

const RESTARTS: u64 = 8;

/// k-medoids clustering of a precomputed distance matrix.
///
/// Alternates nearest-medoid assignment with per-cluster medoid updates until
/// no medoid moves, then tries the best improving PAM swap and resumes. This
/// runs from several farthest-point seedings and the cheapest result is kept,
/// the earliest one on ties. The run is fully determined by `seed`.
pub fn k_medoids(d: &DistanceMatrix, k: usize, seed: u64) -> Result<Clustering> {
    let n = d.len();
    if k == 0 || k > n {
        return Err(Error::InvalidK { k, n });
    }
    let mut best: Option<Clustering> = None;
    for restart in 0..RESTARTS.min(n as u64) {
        let run = descend(d, farthest_point_init(d, k, rng::derive_seed(seed, restart)));
        if best.as_ref().is_none_or(|b| run.cost < b.cost) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn descend(d: &DistanceMatrix, mut medoids: Vec<usize>) -> Clustering {
    let mut cost_history = Vec::new();
    for _ in 0..MAX_ROUNDS {
        let (assignment, cost) = assign(d, &medoids);
        cost_history.push(cost);
        if update_medoids(d, &mut medoids, &assignment) {
            continue;
        }
        match best_swap(d, &medoids) {
            Some((c, x)) => medoids[c] = x,
            None => break,
        }
    }
    medoids.sort_unstable();
    let (assignment, cost) = assign(d, &medoids);
    Clustering {
        medoids,
        assignment,
        cost,
        cost_history,
    }
}

/// The K medoid poses used as classification targets.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseVocabulary {
    centers: Vec<NormalizedPose>,
    /// Caller-supplied identifier of the sample each center came from.
    sources: Vec<u64>,
}

const VOCAB_MAGIC: &str = "AFFORDANCE-VOCAB v1";

impl PoseVocabulary {
    pub fn new(centers: Vec<NormalizedPose>, sources: Vec<u64>) -> Result<Self> {
        if centers.is_empty() {
            return Err(Error::EmptyInput("vocabulary has no centers"));
        }
        if centers.len() != sources.len() {
            return Err(Error::Shape("one source id per center".into()));
        }
        Ok(Self { centers, sources })
    }

    /// Clusters `poses` and keeps the normalized medoids. `ids[i]` names pose `i`.
    pub fn build(poses: &[Pose], ids: &[u64], k: usize, seed: u64) -> Result<(Self, Clustering)> {
        if poses.len() != ids.len() {
            return Err(Error::Shape("one id per pose".into()));
        }
        let d = pairwise_distances(poses)?;
        let clustering = k_medoids(&d, k, seed)?;
        let centers = clustering
            .medoids
            .iter()
            .map(|&m| normalize(&poses[m]))
            .collect::<Result<Vec<_>>>()?;
        let sources = clustering.medoids.iter().map(|&m| ids[m]).collect();
        Ok((Self::new(centers, sources)?, clustering))
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn center(&self, class: usize) -> Option<&NormalizedPose> {
        self.centers.get(class)
    }

    pub fn centers(&self) -> &[NormalizedPose] {
        &self.centers
    }

    pub fn sources(&self) -> &[u64] {
        &self.sources
    }

    fn body(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{VOCAB_MAGIC}").unwrap();
        writeln!(out, "schema {}", schema_hash()).unwrap();
        writeln!(out, "k {}", self.centers.len()).unwrap();
        for (c, (center, source)) in self.centers.iter().zip(&self.sources).enumerate() {
            write!(out, "center {c} {source}").unwrap();
            for p in center.joints() {
                write!(out, " {} {}", p.x, p.y).unwrap();
            }
            out.push('\n');
        }
        out
    }

    /// SHA-256 of the serialized centers, hex encoded.
    pub fn checksum(&self) -> String {
        hex::encode(Sha256::digest(self.body().as_bytes()))
    }

    pub fn to_text(&self) -> String {
        let mut out = self.body();
        writeln!(out, "checksum {}", self.checksum()).unwrap();
        out
    }

    /// Parses [`PoseVocabulary::to_text`] output. `origin` names the source in errors.
    pub fn from_text(text: &str, origin: &std::path::Path) -> Result<Self> {
        let err = |line: usize, msg: String| Error::format(origin, line, msg);
        let lines: Vec<&str> = text.lines().collect();
        if lines.first() != Some(&VOCAB_MAGIC) {
            return Err(err(1, format!("expected header {VOCAB_MAGIC:?}")));
        }
        let schema = lines
            .get(1)
            .and_then(|l| l.strip_prefix("schema "))
            .ok_or_else(|| err(2, "missing schema line".into()))?;
        if schema != schema_hash() {
            return Err(err(2, format!("joint schema {schema} does not match {}", schema_hash())));
        }
        let k: usize = lines
            .get(2)
            .and_then(|l| l.strip_prefix("k "))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| err(3, "missing or invalid k".into()))?;
        let mut centers = Vec::with_capacity(k);
        let mut sources = Vec::with_capacity(k);
        for c in 0..k {
            let lineno = 4 + c;
            let line = lines
                .get(lineno - 1)
                .ok_or_else(|| err(lineno, "truncated vocabulary".into()))?;
            let fields: Vec<&str> = line.split(' ').collect();
            if fields.len() != 3 + 2 * JOINT_COUNT || fields[0] != "center" {
                return Err(err(lineno, "malformed center line".into()));
            }
            if fields[1].parse::<usize>().ok() != Some(c) {
                return Err(err(lineno, format!("expected center {c}")));
            }
            sources.push(
                fields[2]
                    .parse::<u64>()
                    .map_err(|e| err(lineno, e.to_string()))?,
            );
            let coords = fields[3..]
                .iter()
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<Vec<f64>, _>>()
                .map_err(|e| err(lineno, e.to_string()))?;
            let joints = coords.chunks_exact(2).map(|p| Point::new(p[0], p[1])).collect();
            centers.push(NormalizedPose::from_joints(joints).map_err(|e| err(lineno, e.to_string()))?);
        }
        let vocab = Self::new(centers, sources)?;
        let lineno = 4 + k;
        let stored = lines
            .get(lineno - 1)
            .and_then(|l| l.strip_prefix("checksum "))
            .ok_or_else(|| err(lineno, "missing checksum".into()))?;
        let found = vocab.checksum();
        if stored != found {
            return Err(Error::Checksum {
                path: origin.to_path_buf(),
                expected: stored.to_string(),
                found,
            });
        }
        Ok(vocab)
    }
}

/// Index of the nearest center under the procrustes distance, lowest id on ties.
pub fn assign_class(pose: &Pose, vocab: &PoseVocabulary) -> Result<usize> {
    let normalized = normalize(pose)?;
    let mut best = (0, f64::INFINITY);
    for (c, center) in vocab.centers.iter().enumerate() {
        let d = shape_distance(normalized.joints(), center.joints())?;
        if d < best.1 {
            best = (c, d);
        }
    }
    Ok(best.0)
}
