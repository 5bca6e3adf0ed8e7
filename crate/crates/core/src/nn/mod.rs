//! Minimal dense-network stack in 64-bit floats: fully connected layers with
//! reverse-mode gradients, the losses the affordance model trains with,
//! Gaussian reparameterization, Adam, and parameter checkpoints.

mod adam;
mod checkpoint;
mod dense;
pub mod gradcheck;
mod loss;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, Slot};
pub use dense::{Activation, Dense, DenseGrads, DenseNet, LayerGrads, Trace};
pub use loss::{
    kl_to_standard_normal, reparameterize, reparameterize_backward, softmax,
    softmax_cross_entropy, squared_error, GaussianParams, KlLoss, LossGrad,
};
