//! Minimal deterministic numerical core.

pub mod checkpoint;
pub mod gradcheck;
pub mod mlp;
pub mod optim;
pub mod rng;
pub mod tensor;

pub use gradcheck::grad_check;
pub use mlp::{mlp_backward, mlp_forward, Activation, ActivationCache, Dense, MlpModel, ParamGrads, Parameters};
pub use optim::{adamw_step, AdamWConfig, OptimizerState};
pub use rng::Rng;
pub use tensor::Tensor;
