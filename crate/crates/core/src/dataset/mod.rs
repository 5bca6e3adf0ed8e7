//! Dataset rows, the dataset file, splits and synthetic negatives.

pub mod io;
mod negatives;
mod record;
mod split;

pub use io::{read_dataset, write_dataset, Dataset, WriteLock};
pub use negatives::{negative_count, synthesize_negatives, DEFAULT_NEGATIVE_RATIO};
pub use record::{decode_features, encode_features, Adjustment, AffordanceRecord, Perturbation, Source, Status};
pub use split::{show_counts, split_by_show};

use crate::pose::Pose;

/// Every joint lies inside a `width` x `height` frame.
pub fn in_frame(pose: &Pose, width: u32, height: u32) -> bool {
    pose.joints()
        .iter()
        .all(|p| p.x >= 0.0 && p.y >= 0.0 && p.x <= f64::from(width) && p.y <= f64::from(height))
}
