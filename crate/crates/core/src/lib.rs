//! Consistency flow matching for one-step visuomotor imitation learning.
//!
//! The crate is organised bottom-up:
//!
//! - [`numcore`]: f64 tensors, tanh MLPs with hand-derived gradients, AdamW,
//!   a seeded RNG and a finite-difference gradient checker.
//! - [`flowmatch`]: linear probability paths, the conditional flow matching
//!   loss, single- and multi-segment consistency losses, EMA target
//!   parameters and the one-step / segment / Euler samplers.
//! - [`perception`]: farthest point sampling, a max-pooled point cloud
//!   encoder and `[-1, 1]` min/max normalisation.
//! - [`simenv`]: a planar two-link arm with synthetic point clouds and a
//!   damped least-squares expert.
//! - [`policy`]: the conditional flow policy, its training loop, chunked
//!   receding-horizon control and the evaluation protocol.

pub mod error;
pub mod flowmatch;
pub mod numcore;
pub mod perception;
pub mod policy;
pub mod simenv;

pub use error::{Error, Result};
