use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::features::CropFeatures;
use crate::pose::{Point, Pose};

/// Where a pose hypothesis came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    /// Transferred from a retrieved frame of another shot.
    Global,
    /// Transferred by accumulated optical flow within the same shot.
    Local,
    /// Placed by an annotator.
    Manual,
    /// Perturbed copy of a positive, used as an evaluation negative.
    Synthetic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Hypothesis,
    Accepted,
    /// Accepted after the annotator scaled/translated the joints.
    Adjusted,
    Rejected,
}

impl Status {
    pub fn name(self) -> &'static str {
        match self {
            Status::Hypothesis => "hypothesis",
            Status::Accepted => "accepted",
            Status::Adjusted => "adjusted",
            Status::Rejected => "rejected",
        }
    }

    /// Accepted in either form.
    pub fn is_accepted(self) -> bool {
        matches!(self, Status::Accepted | Status::Adjusted)
    }

    /// Hypotheses may be accepted, adjusted or rejected. Accepted records may
    /// be re-adjusted or reverted to their plain accepted state. Rejection is
    /// final.
    pub fn can_become(self, next: Status) -> bool {
        use Status::*;
        matches!(
            (self, next),
            (Hypothesis, Accepted | Adjusted | Rejected) | (Accepted, Adjusted) | (Adjusted, Accepted | Adjusted)
        )
    }
}

/// How a synthetic negative was derived from its source positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Perturbation {
    ExtremeScale,
    FarAnchor,
    VerticalFlip,
    ClassSwap,
}

/// Uniform scale about the pose bbox center, then translation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Adjustment {
    pub scale: f64,
    pub translate: [f64; 2],
}

impl Adjustment {
    pub const IDENTITY: Adjustment = Adjustment {
        scale: 1.0,
        translate: [0.0, 0.0],
    };

    pub fn apply(&self, pose: &Pose) -> Result<Pose> {
        if !(self.scale > 0.0) || !self.scale.is_finite() || self.translate.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidPose(format!("bad adjustment {self:?}")));
        }
        let c = pose.bbox().center();
        Ok(pose.scaled_about(c, self.scale)?.translated(self.translate[0], self.translate[1]))
    }
}

/// One dataset row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffordanceRecord {
    pub id: u64,
    pub scene_id: String,
    pub show: String,
    /// Image path relative to the dataset file.
    pub image: String,
    pub image_size: [u32; 2],
    pub anchor: Point,
    pub pose: Pose,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_id: Option<usize>,
    pub source: Source,
    pub status: Status,
    #[serde(default, skip_serializing_if = "is_false")]
    pub negative: bool,
    #[serde(default, skip_serializing_if = "is_false")]
    pub out_of_frame: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub derived_from: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<Perturbation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adjustment: Option<Adjustment>,
    #[serde(
        default,
        skip_serializing_if = "Option::is_none",
        serialize_with = "features_ser",
        deserialize_with = "features_de"
    )]
    pub features: Option<CropFeatures>,
}

fn is_false(b: &bool) -> bool {
    !*b
}

impl AffordanceRecord {
    /// A fresh hypothesis anchored at the pose bbox center.
    pub fn hypothesis(id: u64, scene_id: &str, show: &str, image: &str, image_size: [u32; 2], pose: Pose, source: Source) -> Self {
        Self {
            id,
            scene_id: scene_id.to_owned(),
            show: show.to_owned(),
            image: image.to_owned(),
            image_size,
            anchor: pose.bbox().center(),
            pose,
            class_id: None,
            source,
            status: Status::Hypothesis,
            negative: false,
            out_of_frame: false,
            derived_from: None,
            perturbation: None,
            adjustment: None,
            features: None,
        }
    }

    pub fn transition(&mut self, next: Status) -> Result<()> {
        if !self.status.can_become(next) {
            return Err(Error::IllegalTransition {
                id: self.id,
                from: self.status.name(),
                to: next.name(),
            });
        }
        self.status = next;
        Ok(())
    }

    /// Replaces the joints and records the transform; the record becomes
    /// `adjusted`. The anchor follows the new bbox center.
    pub fn adjust(&mut self, joints: Pose, adjustment: Adjustment) -> Result<()> {
        self.transition(Status::Adjusted)?;
        self.anchor = joints.bbox().center();
        self.pose = joints;
        self.adjustment = Some(adjustment);
        self.features = None;
        Ok(())
    }
}

/// Features travel as one base-64 string of little-endian f64s: the full,
/// half and whole crop vectors concatenated.
fn features_ser<S: Serializer>(f: &Option<CropFeatures>, s: S) -> Result<S::Ok, S::Error> {
    match f {
        None => s.serialize_none(),
        Some(f) => s.serialize_str(&encode_features(f)),
    }
}

fn features_de<'de, D: Deserializer<'de>>(d: D) -> Result<Option<CropFeatures>, D::Error> {
    let text = Option::<String>::deserialize(d)?;
    text.map(|t| decode_features(&t).map_err(serde::de::Error::custom)).transpose()
}

pub fn encode_features(f: &CropFeatures) -> String {
    let mut bytes = Vec::with_capacity(f.dim() * 24);
    for v in f.views() {
        for x in v {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
    }
    STANDARD.encode(bytes)
}

pub fn decode_features(text: &str) -> std::result::Result<CropFeatures, String> {
    let bytes = STANDARD.decode(text).map_err(|e| format!("feature blob: {e}"))?;
    if bytes.is_empty() || bytes.len() % 24 != 0 {
        return Err(format!("feature blob of {} bytes is not three equal f64 vectors", bytes.len()));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let dim = values.len() / 3;
    Ok(CropFeatures {
        full: values[..dim].to_vec(),
        half: values[dim..2 * dim].to_vec(),
        whole: values[2 * dim..].to_vec(),
    })
}
