//! Scene affordance prediction.
//!
//! Given an image of an empty scene and a query point, predict which human
//! poses fit there. Prediction runs in two stages: a classifier chooses a
//! pose class from a data-driven vocabulary of medoid poses, then a
//! conditional VAE samples the scale and per-joint deformation that fit that
//! class into the scene. The crate also covers the data side: mining
//! empty-scene frames, transferring poses into them, persisting the dataset,
//! and evaluating both inference tasks.

pub mod clustering;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod features;
pub mod mining;
pub mod model;
pub mod nn;
pub mod pose;
pub mod rng;
pub mod synthetic;

pub use clustering::{assign_class, k_medoids, pairwise_distances, DistanceMatrix, PoseVocabulary};
pub use error::{Error, Result};
pub use features::{ConditionInput, CropFeatures, CropSpec, Featurizer, RandomProjectionFeaturizer};
pub use pose::{
    decode, encode, normalize, procrustes_distance, NormalizedPose, Point, Pose, ScaleDeform,
    JOINT_COUNT, JOINT_NAMES,
};
