//! 2D body poses and the scale/deformation codec.
//!
//! Coordinates follow the pixel convention: x grows rightward, y grows
//! downward, origin at the image top-left. Every pose carries exactly
//! [`JOINT_COUNT`] joints in the order of [`JOINT_NAMES`].
//!
//! A concrete pose is expressed relative to a vocabulary center as a
//! [`ScaleDeform`]: the center is stretched to the pose's bounding box
//! (`s_h`, `s_w`), its bounding-box center is pinned to the anchor point,
//! and the remaining per-joint residual is the deformation.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const JOINT_COUNT: usize = 17;

/// Length of a flattened [`ScaleDeform`]: two scales plus one (dx, dy) per joint.
pub const SCALE_DEFORM_DIM: usize = 2 + 2 * JOINT_COUNT;

pub const JOINT_NAMES: [&str; JOINT_COUNT] = [
    "head",
    "neck",
    "right_shoulder",
    "right_elbow",
    "right_wrist",
    "left_shoulder",
    "left_elbow",
    "left_wrist",
    "right_hip",
    "right_knee",
    "right_ankle",
    "left_hip",
    "left_knee",
    "left_ankle",
    "upper_torso",
    "mid_torso",
    "lower_torso",
];

/// Skeleton edges used for drawing, as index pairs into [`JOINT_NAMES`].
pub const BONES: [(usize, usize); 16] = [
    (0, 1),
    (1, 2),
    (2, 3),
    (3, 4),
    (1, 5),
    (5, 6),
    (6, 7),
    (1, 14),
    (14, 15),
    (15, 16),
    (16, 8),
    (8, 9),
    (9, 10),
    (16, 11),
    (11, 12),
    (12, 13),
];

/// Short stable digest of the joint schema, written into dataset headers.
pub fn schema_hash() -> String {
    let mut hasher = Sha256::new();
    for name in JOINT_NAMES {
        hasher.update(name.as_bytes());
        hasher.update(b"\n");
    }
    hex::encode(&hasher.finalize()[..8])
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl From<[f64; 2]> for Point {
    fn from([x, y]: [f64; 2]) -> Self {
        Self { x, y }
    }
}

impl From<Point> for [f64; 2] {
    fn from(p: Point) -> Self {
        [p.x, p.y]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub min: Point,
    pub max: Point,
}

impl BoundingBox {
    pub fn of(points: &[Point]) -> Self {
        let mut min = Point::new(f64::INFINITY, f64::INFINITY);
        let mut max = Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in points {
            min.x = min.x.min(p.x);
            min.y = min.y.min(p.y);
            max.x = max.x.max(p.x);
            max.y = max.y.max(p.y);
        }
        Self { min, max }
    }

    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }

    pub fn center(&self) -> Point {
        Point::new(
            0.5 * (self.min.x + self.max.x),
            0.5 * (self.min.y + self.max.y),
        )
    }
}

fn validate_joints(joints: &[Point]) -> Result<()> {
    if joints.len() != JOINT_COUNT {
        return Err(Error::InvalidPose(format!(
            "expected {JOINT_COUNT} joints, got {}",
            joints.len()
        )));
    }
    if let Some(i) = joints.iter().position(|p| !p.is_finite()) {
        return Err(Error::InvalidPose(format!(
            "joint {} ({}) is not finite",
            i, JOINT_NAMES[i]
        )));
    }
    let bbox = BoundingBox::of(joints);
    if !(bbox.height() > 0.0 && bbox.width() > 0.0) {
        return Err(Error::InvalidPose(format!(
            "degenerate bounding box {}x{}",
            bbox.width(),
            bbox.height()
        )));
    }
    Ok(())
}

/// A pose in image pixel coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Point>", into = "Vec<Point>")]
pub struct Pose {
    joints: Vec<Point>,
}

impl TryFrom<Vec<Point>> for Pose {
    type Error = Error;

    fn try_from(joints: Vec<Point>) -> Result<Self> {
        Pose::new(joints)
    }
}

impl From<Pose> for Vec<Point> {
    fn from(p: Pose) -> Self {
        p.joints
    }
}

impl Pose {
    pub fn new(joints: Vec<Point>) -> Result<Self> {
        validate_joints(&joints)?;
        Ok(Self { joints })
    }

    /// Builds a pose from interleaved `x0, y0, x1, y1, ...` coordinates.
    pub fn from_flat(coords: &[f64]) -> Result<Self> {
        if coords.len() != 2 * JOINT_COUNT {
            return Err(Error::InvalidPose(format!(
                "expected {} coordinates, got {}",
                2 * JOINT_COUNT,
                coords.len()
            )));
        }
        Self::new(
            coords
                .chunks_exact(2)
                .map(|c| Point::new(c[0], c[1]))
                .collect(),
        )
    }

    pub fn joints(&self) -> &[Point] {
        &self.joints
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.joints.iter().flat_map(|p| [p.x, p.y]).collect()
    }

    pub fn bbox(&self) -> BoundingBox {
        BoundingBox::of(&self.joints)
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Pose {
        Pose {
            joints: self
                .joints
                .iter()
                .map(|p| Point::new(p.x + dx, p.y + dy))
                .collect(),
        }
    }

    /// Uniform scaling about `origin`.
    pub fn scaled_about(&self, origin: Point, factor: f64) -> Result<Pose> {
        Pose::new(
            self.joints
                .iter()
                .map(|p| {
                    Point::new(
                        origin.x + factor * (p.x - origin.x),
                        origin.y + factor * (p.y - origin.y),
                    )
                })
                .collect(),
        )
    }

    /// Euclidean norm of the joint-wise difference, flattened over all joints.
    pub fn euclidean_distance(&self, other: &Pose) -> f64 {
        self.joints
            .iter()
            .zip(&other.joints)
            .map(|(a, b)| (a.x - b.x).powi(2) + (a.y - b.y).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// A pose with unit bounding-box height, centered on the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Point>", into = "Vec<Point>")]
pub struct NormalizedPose {
    joints: Vec<Point>,
}

impl TryFrom<Vec<Point>> for NormalizedPose {
    type Error = Error;

    fn try_from(joints: Vec<Point>) -> Result<Self> {
        NormalizedPose::from_joints(joints)
    }
}

impl From<NormalizedPose> for Vec<Point> {
    fn from(p: NormalizedPose) -> Self {
        p.joints
    }
}

impl NormalizedPose {
    const TOLERANCE: f64 = 1e-9;

    /// Accepts joints that already satisfy the canonical-frame invariants.
    pub fn from_joints(joints: Vec<Point>) -> Result<Self> {
        validate_joints(&joints)?;
        let bbox = BoundingBox::of(&joints);
        let center = bbox.center();
        if (bbox.height() - 1.0).abs() > Self::TOLERANCE
            || center.x.abs() > Self::TOLERANCE
            || center.y.abs() > Self::TOLERANCE
        {
            return Err(Error::InvalidPose(format!(
                "not normalized: height {}, center ({}, {})",
                bbox.height(),
                center.x,
                center.y
            )));
        }
        Ok(Self { joints })
    }

    pub fn joints(&self) -> &[Point] {
        &self.joints
    }

    pub fn bbox(&self) -> BoundingBox {
        BoundingBox::of(&self.joints)
    }

    /// The normalized pose viewed as an ordinary pose (unit height at the origin).
    pub fn as_pose(&self) -> Pose {
        Pose {
            joints: self.joints.clone(),
        }
    }
}

/// Scale and per-joint deformation of a pose relative to a vocabulary center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleDeform {
    pub s_h: f64,
    pub s_w: f64,
    /// `dx_1, dy_1, ..., dx_17, dy_17` in pixels.
    pub deform: Vec<f64>,
}

impl ScaleDeform {
    pub fn new(s_h: f64, s_w: f64, deform: Vec<f64>) -> Result<Self> {
        let sd = Self { s_h, s_w, deform };
        sd.validate()?;
        Ok(sd)
    }

    pub fn validate(&self) -> Result<()> {
        if self.deform.len() != 2 * JOINT_COUNT {
            return Err(Error::Shape(format!(
                "deformation has {} entries, expected {}",
                self.deform.len(),
                2 * JOINT_COUNT
            )));
        }
        if !(self.s_h > 0.0 && self.s_w > 0.0) || !self.s_h.is_finite() || !self.s_w.is_finite()
        {
            return Err(Error::InvalidScale {
                s_h: self.s_h,
                s_w: self.s_w,
            });
        }
        if self.deform.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidPose("non-finite deformation".into()));
        }
        Ok(())
    }

    /// Flattened `[s_h, s_w, dx_1, dy_1, ...]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(SCALE_DEFORM_DIM);
        v.push(self.s_h);
        v.push(self.s_w);
        v.extend_from_slice(&self.deform);
        v
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        if values.len() != SCALE_DEFORM_DIM {
            return Err(Error::Shape(format!(
                "scale/deformation vector has {} entries, expected {SCALE_DEFORM_DIM}",
                values.len()
            )));
        }
        Self::new(values[0], values[1], values[2..].to_vec())
    }
}

/// Rescales to unit bounding-box height and moves the box center to the origin.
pub fn normalize(pose: &Pose) -> Result<NormalizedPose> {
    validate_joints(&pose.joints)?;
    let bbox = pose.bbox();
    let h = bbox.height();
    let c = bbox.center();
    let joints = pose
        .joints
        .iter()
        .map(|p| Point::new((p.x - c.x) / h, (p.y - c.y) / h))
        .collect();
    Ok(NormalizedPose { joints })
}

/// Centers `points` on their centroid and scales them to unit Frobenius norm.
fn centered_unit(points: &[Point]) -> Result<Vec<Point>> {
    let n = points.len() as f64;
    let cx = points.iter().map(|p| p.x).sum::<f64>() / n;
    let cy = points.iter().map(|p| p.y).sum::<f64>() / n;
    let centered: Vec<Point> = points
        .iter()
        .map(|p| Point::new(p.x - cx, p.y - cy))
        .collect();
    let norm = centered
        .iter()
        .map(|p| p.x * p.x + p.y * p.y)
        .sum::<f64>()
        .sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::InvalidPose("shape collapses to a point".into()));
    }
    Ok(centered
        .into_iter()
        .map(|p| Point::new(p.x / norm, p.y / norm))
        .collect())
}

/// Procrustes distance over arbitrary equally sized point sets.
///
/// Both shapes are reduced to centroid-free, unit-norm form; the second is
/// then fitted to the first with the best non-negative uniform scale. The
/// result is the RMS joint residual of that fit. No rotation or reflection is
/// removed, so the distance is orientation sensitive.
pub fn shape_distance(a: &[Point], b: &[Point]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Shape(format!(
            "shape sizes differ or are empty: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let a = centered_unit(a)?;
    let b = centered_unit(b)?;
    if a == b {
        return Ok(0.0);
    }
    // With unit norms the optimal scale is the inner product. Clamping at
    // zero forbids the point reflection a negative scale would introduce.
    // The residual is summed directly rather than as 1 - <a, b>^2, which
    // cancels catastrophically for near-identical shapes.
    let inner: f64 = a.iter().zip(&b).map(|(p, q)| p.x * q.x + p.y * q.y).sum();
    let scale = inner.max(0.0);
    let residual: f64 = a
        .iter()
        .zip(&b)
        .map(|(p, q)| (p.x - scale * q.x).powi(2) + (p.y - scale * q.y).powi(2))
        .sum();
    Ok((residual / a.len() as f64).sqrt())
}

pub fn procrustes_distance(a: &Pose, b: &Pose) -> Result<f64> {
    shape_distance(&a.joints, &b.joints)
}

/// Places `center` at `anchor` with the given per-axis scales.
fn placed_center(center: &NormalizedPose, s_h: f64, s_w: f64, anchor: Point) -> Vec<Point> {
    let c = center.bbox().center();
    center
        .joints
        .iter()
        .map(|p| {
            Point::new(
                anchor.x + s_w * (p.x - c.x),
                anchor.y + s_h * (p.y - c.y),
            )
        })
        .collect()
}

/// Expresses `pose` as scale and deformation of `center` pinned at `anchor`.
pub fn encode(pose: &Pose, center: &NormalizedPose, anchor: Point) -> Result<ScaleDeform> {
    validate_joints(&pose.joints)?;
    let pb = pose.bbox();
    let cb = center.bbox();
    let s_h = pb.height() / cb.height();
    let s_w = pb.width() / cb.width();
    let placed = placed_center(center, s_h, s_w, anchor);
    let deform = pose
        .joints
        .iter()
        .zip(&placed)
        .flat_map(|(p, q)| [p.x - q.x, p.y - q.y])
        .collect();
    ScaleDeform::new(s_h, s_w, deform)
}

/// Inverse of [`encode`] for the same center and anchor.
pub fn decode(sd: &ScaleDeform, center: &NormalizedPose, anchor: Point) -> Result<Pose> {
    sd.validate()?;
    let placed = placed_center(center, sd.s_h, sd.s_w, anchor);
    let joints = placed
        .iter()
        .zip(sd.deform.chunks_exact(2))
        .map(|(q, d)| Point::new(q.x + d[0], q.y + d[1]))
        .collect();
    Pose::new(joints)
}
