//! Kinodynamic planning toolkit: a sampling-based tree planner whose action
//! sampler is a conditional flow-matching policy trained on expert
//! trajectories, alongside a uniform-RRT baseline, a standalone policy-rollout
//! baseline, the expert-data pipeline, and a benchmark harness.

pub mod bench;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod expert;
pub mod grid;
pub mod planner;
pub mod policy;
pub mod spatial;
pub mod validate;

pub use error::{Error, Result};
