//! Flow matching on linear probability paths, consistency objectives and
//! samplers.

pub mod ema;
pub mod field;
pub mod loss;
pub mod path;
pub mod sampler;
pub mod schedule;

pub use ema::{ema_update, EmaParams};
pub use field::{ConstantField, CountingField, FnField, MlpField, PointTargetField, TimeEmbedding, VelocityField};
pub use loss::{
    cfm_inputs, cfm_loss, cfm_loss_value, cfm_objective, consistency_fm_loss, consistency_fm_loss_value,
    consistency_inputs, consistency_objective, ConsistencyInputs, CouplingBatch, CouplingSample, LossOutput,
};
pub use path::{f_map, interpolate, interpolate_rows};
pub use sampler::{sample_euler, sample_onestep, sample_segments, Sampled, Sampler};
pub use schedule::SegmentSchedule;
