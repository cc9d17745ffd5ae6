//! FlowPolicy: point-cloud-conditioned action-chunk generation, its training
//! loop over demonstrations, and the evaluation protocol.

mod condition;
mod config;
mod eval;
mod model;
mod train;

/// Joint velocities per action.
pub const ACTION_DIM: usize = 2;

pub use condition::{assemble_condition, build_condition, downsample, stack_history, visual_gradient};
pub use config::{LrSchedule, Objective, PolicyConfig};
pub use eval::{
    evaluate, evaluate_fn, final_score, mean_and_std, CheckpointScore, EpisodeOutcome, EvalReport, EvalSummary,
};
pub use model::{flatten_chunk, unflatten_chunk, ActOutput, ActTiming, FlowPolicy, PolicyNet};
pub use train::{train_policy, TrainOutcome, Trainer, TrainingSet};
