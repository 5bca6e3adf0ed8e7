//! Deterministic fixtures: pose templates, random records, learning
//! fixtures for the classifier and VAE, camera-pan flow sequences, and a
//! small sitcom-style corpus for the mining pipeline.

use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dataset::{AffordanceRecord, Source, Status};
use crate::error::{Error, Result};
use crate::features::{CropFeatures, SceneImage};
use crate::mining::{Corpus, FlowField, Frame, ScoreTable, Shot};
use crate::model::{ClassifierExample, VaeExample};
use crate::pose::{Point, Pose, ScaleDeform, BONES, JOINT_COUNT, SCALE_DEFORM_DIM};
use crate::rng::{self, Rng};

/// Body configurations the fixtures are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activity {
    Standing,
    SittingRight,
    SittingLeft,
    LyingHeadLeft,
    LyingHeadRight,
}

impl Activity {
    pub const ALL: [Activity; 5] = [
        Activity::Standing,
        Activity::SittingRight,
        Activity::SittingLeft,
        Activity::LyingHeadLeft,
        Activity::LyingHeadRight,
    ];

    /// Joint layout with the longest side spanning one unit, centered on the origin.
    pub fn template(self) -> [Point; JOINT_COUNT] {
        const STANDING: [(f64, f64); JOINT_COUNT] = [
            (0.0, -0.45),
            (0.0, -0.35),
            (-0.1, -0.32),
            (-0.13, -0.15),
            (-0.14, 0.0),
            (0.1, -0.32),
            (0.13, -0.15),
            (0.14, 0.0),
            (-0.07, 0.02),
            (-0.07, 0.26),
            (-0.07, 0.5),
            (0.07, 0.02),
            (0.07, 0.26),
            (0.07, 0.5),
            (0.0, -0.25),
            (0.0, -0.12),
            (0.0, 0.0),
        ];
        const SITTING: [(f64, f64); JOINT_COUNT] = [
            (-0.1, -0.5),
            (-0.1, -0.38),
            (-0.13, -0.35),
            (-0.08, -0.18),
            (0.05, -0.12),
            (-0.07, -0.35),
            (-0.02, -0.18),
            (0.1, -0.12),
            (-0.12, 0.05),
            (0.2, 0.05),
            (0.2, 0.45),
            (-0.08, 0.05),
            (0.24, 0.07),
            (0.26, 0.5),
            (-0.1, -0.28),
            (-0.1, -0.12),
            (-0.1, 0.02),
        ];
        const LYING: [(f64, f64); JOINT_COUNT] = [
            (-0.5, -0.05),
            (-0.4, -0.03),
            (-0.37, -0.06),
            (-0.2, -0.09),
            (-0.05, -0.07),
            (-0.37, 0.02),
            (-0.2, 0.05),
            (-0.05, 0.04),
            (0.02, -0.04),
            (0.25, -0.04),
            (0.5, -0.03),
            (0.02, 0.03),
            (0.25, 0.04),
            (0.5, 0.06),
            (-0.3, -0.02),
            (-0.15, -0.01),
            (0.0, 0.0),
        ];
        let (base, mirror) = match self {
            Activity::Standing => (STANDING, false),
            Activity::SittingRight => (SITTING, false),
            Activity::SittingLeft => (SITTING, true),
            Activity::LyingHeadLeft => (LYING, false),
            Activity::LyingHeadRight => (LYING, true),
        };
        base.map(|(x, y)| Point::new(if mirror { -x } else { x }, y))
    }
}

/// A template pose of longest side `size` pixels with per-joint Gaussian
/// jitter (`jitter` as a fraction of `size`), bbox-centered at `center`.
pub fn activity_pose(r: &mut Rng, activity: Activity, size: f64, jitter: f64, center: Point) -> Pose {
    let noise = rng::standard_normal(r, 2 * JOINT_COUNT);
    let joints: Vec<Point> = activity
        .template()
        .iter()
        .enumerate()
        .map(|(i, p)| Point::new((p.x + jitter * noise[2 * i]) * size, (p.y + jitter * noise[2 * i + 1]) * size))
        .collect();
    let pose = Pose::new(joints).expect("templates are non-degenerate");
    let c = pose.bbox().center();
    pose.translated(center.x - c.x, center.y - c.y)
}

/// A pose of a random activity with random size and position.
pub fn random_pose(r: &mut Rng) -> Pose {
    let activity = Activity::ALL[r.random_range(0..Activity::ALL.len())];
    let size = r.random_range(20.0..400.0);
    let center = Point::new(r.random_range(-500.0..1500.0), r.random_range(-500.0..1500.0));
    activity_pose(r, activity, size, 0.03, center)
}

/// A record with every optional field exercised at random.
pub fn random_record(r: &mut Rng, id: u64) -> AffordanceRecord {
    let pose = random_pose(r);
    let mut rec = AffordanceRecord::hypothesis(
        id,
        &format!("scene-{}", r.random_range(0..50)),
        ["alpha", "bravo", "charlie"][r.random_range(0..3)],
        &format!("frames/{:05}.png", r.random_range(0..10_000)),
        [r.random_range(16..2000), r.random_range(16..2000)],
        pose,
        [Source::Global, Source::Local, Source::Manual, Source::Synthetic][r.random_range(0..4)],
    );
    rec.anchor = Point::new(r.random_range(-1e3..1e3), r.random::<f64>() * 1e-3);
    rec.status = [Status::Hypothesis, Status::Accepted, Status::Adjusted, Status::Rejected][r.random_range(0..4)];
    if r.random_bool(0.5) {
        rec.class_id = Some(r.random_range(0..30));
    }
    rec.negative = r.random_bool(0.3);
    rec.out_of_frame = r.random_bool(0.2);
    if r.random_bool(0.3) {
        rec.derived_from = Some(r.random());
        rec.perturbation = Some(crate::dataset::Perturbation::ClassSwap);
    }
    if r.random_bool(0.3) {
        rec.adjustment = Some(crate::dataset::Adjustment {
            scale: r.random_range(0.5..2.0),
            translate: [r.random_range(-9.0..9.0), r.random::<f64>()],
        });
    }
    if r.random_bool(0.5) {
        let dim = r.random_range(1..6);
        rec.features = Some(CropFeatures {
            full: rng::standard_normal(r, dim),
            half: rng::standard_normal(r, dim),
            whole: rng::standard_normal(r, dim),
        });
    }
    rec
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// Linearly separable crop features: each class owns a random unit
/// direction, and every example is that direction plus small isotropic noise
/// in each of the three crops.
pub fn separable_classifier_fixture(classes: usize, per_class: usize, dim: usize, seed: u64) -> Vec<ClassifierExample> {
    let mut r = rng::seeded(seed);
    let dirs: Vec<[Vec<f64>; 3]> = (0..classes)
        .map(|_| std::array::from_fn(|_| unit(rng::standard_normal(&mut r, dim))))
        .collect();
    let mut out = Vec::with_capacity(classes * per_class);
    for _ in 0..per_class {
        for (class, d) in dirs.iter().enumerate() {
            let mut view = |k: usize| -> Vec<f64> {
                let noise = rng::standard_normal(&mut r, dim);
                d[k].iter().zip(noise).map(|(a, n)| a + 0.1 * n).collect()
            };
            let crops = CropFeatures {
                full: view(0),
                half: view(1),
                whole: view(2),
            };
            out.push(ClassifierExample { crops, class });
        }
    }
    out
}

/// Conditional VAE fixture: targets are a class-dependent mean plus
/// Gaussian noise; crop features carry no class information.
#[derive(Debug, Clone)]
pub struct VaeFixture {
    pub examples: Vec<VaeExample>,
    /// True per-class mean of the 36-d target.
    pub means: Vec<Vec<f64>>,
    /// Standard deviation of the target noise, per dimension.
    pub noise: f64,
}

/// Noise is drawn in antithetic pairs (ε, -ε), so each class's empirical
/// target mean equals its true mean.
pub fn conditional_vae_fixture(classes: usize, per_class: usize, dim: usize, noise: f64, seed: u64) -> VaeFixture {
    let mut r = rng::seeded(seed);
    let means: Vec<Vec<f64>> = (0..classes)
        .map(|c| {
            let mut m = vec![0.0; SCALE_DEFORM_DIM];
            m[0] = 40.0 + 2.0 * noise * c as f64;
            m[1] = 20.0 + 1.5 * noise * c as f64;
            for (i, v) in m.iter_mut().enumerate().skip(2) {
                *v = 2.0 * noise * (i as f64 * 0.9 + c as f64 * 2.1).sin();
            }
            m
        })
        .collect();
    let mut examples = Vec::with_capacity(classes * per_class);
    for _ in 0..per_class.div_ceil(2) {
        for (class, m) in means.iter().enumerate() {
            let eps = rng::standard_normal(&mut r, SCALE_DEFORM_DIM);
            for sign in [1.0, -1.0] {
                if examples.len() >= classes * per_class {
                    break;
                }
                let y: Vec<f64> = m.iter().zip(&eps).map(|(a, e)| a + sign * noise * e).collect();
                let crops = CropFeatures {
                    full: unit(rng::standard_normal(&mut r, dim)),
                    half: unit(rng::standard_normal(&mut r, dim)),
                    whole: unit(rng::standard_normal(&mut r, dim)),
                };
                examples.push(VaeExample {
                    crops,
                    class,
                    target: ScaleDeform::from_slice(&y).expect("fixture scales stay positive"),
                });
            }
        }
    }
    VaeFixture { examples, means, noise }
}

/// A camera move across `steps` frames whose per-frame motion is a small
/// rotation about the frame center plus a translation, with a pose planted
/// in the first frame and its exact position in the last.
#[derive(Debug, Clone)]
pub struct PanSequence {
    pub flows: Vec<FlowField>,
    pub planted: Pose,
    pub expected: Pose,
}

pub fn pan_sequence(width: u32, height: u32, steps: usize, seed: u64) -> Result<PanSequence> {
    let mut r = rng::seeded(seed);
    let c = Point::new(f64::from(width) / 2.0, f64::from(height) / 2.0);
    let moves: Vec<(f64, f64, f64)> = (0..steps)
        .map(|_| (r.random_range(-0.01..0.01), r.random_range(-2.0..2.0), r.random_range(-0.5..0.5)))
        .collect();
    let step = |(theta, tx, ty): (f64, f64, f64), p: Point| {
        let (s, co) = f64::sin_cos(theta);
        let (x, y) = (p.x - c.x, p.y - c.y);
        Point::new(c.x + co * x - s * y + tx, c.y + s * x + co * y + ty)
    };
    let flows = moves
        .iter()
        .map(|&m| {
            FlowField::from_fn(width, height, |p| {
                let q = step(m, p);
                (q.x - p.x, q.y - p.y)
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let planted = activity_pose(&mut r, Activity::Standing, f64::from(height) * 0.4, 0.02, c);
    let expected = Pose::new(
        planted
            .joints()
            .iter()
            .map(|&p| moves.iter().fold(p, |q, &m| step(m, q)))
            .collect(),
    )?;
    Ok(PanSequence { flows, planted, expected })
}

/// Shape of the generated corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub shows: usize,
    pub shots_per_show: usize,
    /// Frames in each shot; the first `occupied_frames` contain people.
    pub frames_per_shot: usize,
    pub occupied_frames: usize,
    pub width: u32,
    pub height: u32,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            shows: 7,
            shots_per_show: 3,
            frames_per_shot: 10,
            occupied_frames: 5,
            width: 96,
            height: 72,
            seed: 0,
        }
    }
}

pub const SHOW_NAMES: [&str; 7] = ["friends", "himym", "bigbang", "twomen", "seinfeld", "everybody", "frasier"];

/// Set layout shared by every shot of one show.
struct Set {
    wall: f32,
    floor: f32,
    stripe: f64,
    couch_x: f64,
    bed_x: f64,
    stand_x: f64,
}

const FLOOR_Y: f64 = 0.83;
const PAN_MARGIN: u32 = 48;

impl Set {
    fn random(r: &mut Rng, width: f64) -> Self {
        let slots = [0.2, 0.5, 0.8];
        let mut order = [0usize, 1, 2];
        rand::seq::SliceRandom::shuffle(&mut order[..], r);
        let span = width + f64::from(PAN_MARGIN);
        Self {
            wall: r.random_range(0.35..0.7),
            floor: r.random_range(0.1..0.3),
            stripe: r.random_range(0.15..0.6),
            couch_x: slots[order[0]] * span,
            bed_x: slots[order[1]] * span,
            stand_x: slots[order[2]] * span,
        }
    }

    fn intensity(&self, x: f64, y: f64, h: f64) -> f32 {
        let floor_y = FLOOR_Y * h;
        let in_rect = |cx: f64, half_w: f64, top: f64, bottom: f64| (x - cx).abs() <= half_w && y >= top && y <= bottom;
        if in_rect(self.couch_x, 0.22 * h, 0.45 * h, 0.62 * h) {
            return 0.12;
        }
        if in_rect(self.couch_x, 0.22 * h, 0.62 * h, 0.74 * h) {
            return 0.22;
        }
        if in_rect(self.bed_x, 0.3 * h, 0.66 * h, 0.78 * h) {
            return 0.92;
        }
        if in_rect(self.bed_x - 0.3 * h, 0.03 * h, 0.5 * h, 0.78 * h) {
            return 0.6;
        }
        if y >= floor_y {
            return self.floor + 0.05 * ((x * 0.5).sin() as f32);
        }
        self.wall + 0.08 * ((x * self.stripe).sin() as f32)
    }

    /// Where a person doing `activity` sits in set coordinates, and the pose size.
    fn placement(&self, activity: Activity, h: f64) -> (Point, f64) {
        match activity {
            Activity::Standing => (Point::new(self.stand_x, FLOOR_Y * h - 0.25 * h), 0.5 * h),
            Activity::SittingRight | Activity::SittingLeft => (Point::new(self.couch_x, 0.6 * h), 0.38 * h),
            Activity::LyingHeadLeft | Activity::LyingHeadRight => (Point::new(self.bed_x, 0.63 * h), 0.55 * h),
        }
    }
}

fn render(set: &Set, offset: f64, width: u32, height: u32, people: &[Pose]) -> SceneImage {
    let h = f64::from(height);
    let mut pixels = Vec::with_capacity((width * height) as usize);
    for j in 0..height {
        for i in 0..width {
            pixels.push(set.intensity(f64::from(i) + offset, f64::from(j), h));
        }
    }
    for pose in people {
        for &(a, b) in &BONES {
            let (p, q) = (pose.joints()[a], pose.joints()[b]);
            let steps = (p.distance(q) * 2.0).ceil().max(1.0) as usize;
            for s in 0..=steps {
                let t = s as f64 / steps as f64;
                let (x, y) = (p.x + (q.x - p.x) * t, p.y + (q.y - p.y) * t);
                for (dx, dy) in [(0, 0), (1, 0), (0, 1), (-1, 0), (0, -1)] {
                    let (xi, yi) = (x.round() as i64 + dx, y.round() as i64 + dy);
                    if xi >= 0 && yi >= 0 && xi < i64::from(width) && yi < i64::from(height) {
                        pixels[(yi as u32 * width + xi as u32) as usize] = 0.97;
                    }
                }
            }
        }
    }
    SceneImage::from_pixels(width, height, pixels).expect("sized buffer")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub frames: usize,
    pub occupied: usize,
    /// Frames without people whose scores should pass the filter.
    pub empty: usize,
    /// Frames without people given a spurious face score.
    pub decoys: usize,
}

/// Writes `corpus.json`, `scores.bin`, frame PNGs and flow files under `dir`.
///
/// Each show has one set with a couch, a bed and open floor. Every shot pans
/// the camera across it at constant speed; people sit, stand or lie at the
/// matching furniture in the first frames and are gone afterwards.
pub fn write_corpus(dir: &Path, config: &CorpusConfig) -> Result<CorpusSummary> {
    if config.shows == 0 || config.shows > SHOW_NAMES.len() {
        return Err(Error::Config(format!("shows must be in 1..={}", SHOW_NAMES.len())));
    }
    if config.occupied_frames >= config.frames_per_shot {
        return Err(Error::Config("a shot needs at least one empty frame".into()));
    }
    for sub in ["frames", "flows"] {
        std::fs::create_dir_all(dir.join(sub)).map_err(|e| Error::io(dir.join(sub), e))?;
    }
    let mut r = rng::seeded(config.seed);
    let (w, h) = (config.width, config.height);
    let hf = f64::from(h);
    let mut shots = Vec::new();
    let mut scores = ScoreTable::default();
    let mut summary = CorpusSummary {
        frames: 0,
        occupied: 0,
        empty: 0,
        decoys: 0,
    };
    let mut next_frame = 0u64;
    for show in SHOW_NAMES.iter().take(config.shows) {
        let set = Set::random(&mut r, f64::from(w));
        let base = r.random_range(8.0..f64::from(PAN_MARGIN) - 8.0);
        for s in 0..config.shots_per_show {
            let start = base + r.random_range(-3.0..3.0);
            let speed: f64 = r.random_range(-0.8..0.8);
            let activities = {
                let first = Activity::ALL[r.random_range(1..Activity::ALL.len())];
                [Activity::Standing, first]
            };
            let mut frames = Vec::new();
            let mut flows = Vec::new();
            for t in 0..config.frames_per_shot {
                let id = next_frame;
                next_frame += 1;
                let offset = start + speed * t as f64;
                let occupied = t < config.occupied_frames;
                let people: Vec<Pose> = if occupied {
                    activities
                        .iter()
                        .map(|&a| {
                            let (at, size) = set.placement(a, hf);
                            let at = Point::new(at.x - offset, at.y);
                            let size = size * r.random_range(0.95..1.05);
                            activity_pose(&mut r, a, size, 0.015, at)
                        })
                        .collect()
                } else {
                    Vec::new()
                };
                let image = format!("frames/{id:05}.png");
                render(&set, offset, w, h, &people).save_png(&dir.join(&image))?;
                summary.frames += 1;
                if occupied {
                    summary.occupied += 1;
                    scores.insert(id, r.random_range(6.0..14.0), r.random_range(0.7..0.99), r.random_range(0.02..0.3));
                } else if r.random_bool(0.1) {
                    summary.decoys += 1;
                    scores.insert(id, r.random_range(5.0..8.0), r.random_range(0.0..0.3), r.random_range(0.6..0.98));
                } else {
                    summary.empty += 1;
                    scores.insert(id, 0.0, r.random_range(0.0..0.3), r.random_range(0.6..0.98));
                }
                frames.push(Frame { id, image, poses: people });
                if t + 1 < config.frames_per_shot {
                    let name = format!("flows/{id:05}.flow");
                    let field = FlowField::from_fn(w, h, |_| (-speed, 0.0))?;
                    crate::dataset::io::write_atomic(&dir.join(&name), &field.to_bytes())?;
                    flows.push(name);
                }
            }
            shots.push(Shot {
                id: format!("{show}-{s}"),
                show: (*show).to_owned(),
                frames,
                flows,
            });
        }
    }
    crate::dataset::io::write_atomic(&dir.join("scores.bin"), &scores.to_bytes())?;
    let corpus = Corpus {
        fps: 1.0,
        scores: "scores.bin".into(),
        shots,
    };
    let json = serde_json::to_string_pretty(&corpus).expect("corpus serializes");
    crate::dataset::io::write_atomic(&dir.join("corpus.json"), json.as_bytes())?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mining::{accumulate_flow, transfer_pose, TargetFrame};
    use crate::pose::normalize;

    #[test]
    fn templates_are_distinct_shapes() {
        for (i, a) in Activity::ALL.iter().enumerate() {
            for b in &Activity::ALL[i + 1..] {
                let pa = Pose::new(a.template().to_vec()).unwrap();
                let pb = Pose::new(b.template().to_vec()).unwrap();
                assert!(crate::pose::procrustes_distance(&pa, &pb).unwrap() > 0.01, "{a:?} vs {b:?}");
            }
        }
        let mut r = rng::seeded(0);
        let p = activity_pose(&mut r, Activity::Standing, 100.0, 0.0, Point::new(5.0, 6.0));
        assert!(p.bbox().center().distance(Point::new(5.0, 6.0)) < 1e-12);
        assert!((normalize(&p).unwrap().bbox().height() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pan_sequence_transfers_within_a_pixel() {
        let seq = pan_sequence(80, 60, 8, 3).unwrap();
        let field = accumulate_flow(&seq.flows).unwrap();
        let target = TargetFrame {
            scene_id: "s".into(),
            show: "x".into(),
            image: "x.png".into(),
            width: 80,
            height: 60,
        };
        let rec = transfer_pose(&seq.planted, &field, &target, Source::Local, 0).unwrap();
        for (a, b) in rec.pose.joints().iter().zip(seq.expected.joints()) {
            assert!(a.distance(*b) < 1e-6);
        }
    }

    #[test]
    fn vae_fixture_is_mean_exact() {
        let f = conditional_vae_fixture(3, 10, 4, 1.5, 1);
        assert_eq!(f.examples.len(), 30);
        for (c, m) in f.means.iter().enumerate() {
            let ys: Vec<Vec<f64>> = f.examples.iter().filter(|e| e.class == c).map(|e| e.target.to_vec()).collect();
            for d in 0..SCALE_DEFORM_DIM {
                let mean = ys.iter().map(|y| y[d]).sum::<f64>() / ys.len() as f64;
                assert!((mean - m[d]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn corpus_is_deterministic() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let cfg = CorpusConfig {
            shows: 2,
            shots_per_show: 1,
            frames_per_shot: 4,
            occupied_frames: 2,
            ..CorpusConfig::default()
        };
        let sa = write_corpus(a.path(), &cfg).unwrap();
        write_corpus(b.path(), &cfg).unwrap();
        assert_eq!(sa.frames, 8);
        for f in ["corpus.json", "scores.bin", "frames/00003.png", "flows/00000.flow"] {
            assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
        }
    }
}
