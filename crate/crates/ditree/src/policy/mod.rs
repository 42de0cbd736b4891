//! Conditional flow-matching action policy.
//!
//! A small MLP learns the velocity field of a rectified (linear) probability
//! path between Gaussian noise and normalized expert action chunks,
//! conditioned on a local observation built in the tree node's frame. At
//! plan time the field is integrated with Euler (ODE) or Euler–Maruyama
//! (SDE) steps and the resulting chunks drive an MPC-style edge sampler
//! that re-observes the world between chunks.

mod condition;
mod edge;
mod mlp;
mod sample;
mod train;

pub use condition::{build_condition, condition_dim, Target};
pub use edge::{choose_target, DiffusionSampler};
pub use mlp::{Gradients, Layer, PolicyNet};
pub use sample::{sample_actions, sample_chunk_normalized, ActionNorm, SampleConfig, SampleMode};
pub use train::{build_training_samples, fm_loss, train, TrainConfig, TrainSample};
