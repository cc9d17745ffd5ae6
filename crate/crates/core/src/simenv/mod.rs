//! Planar two-link arm with synthetic point-cloud observations and a
//! scripted damped-least-squares expert.

mod arm;
mod episode;
mod expert;
mod render;

pub use arm::{
    distance, elbow_position, env_reset, env_step, forward_kinematics, jacobian, wrap_angle, ArmState, TaskSpec,
    TaskVariant, ROBOT_STATE_DIM,
};
pub use episode::{expert_policy, run_episode, EpisodeRecord, Observation};
pub use expert::{expert_action, EXPERT_DAMPING, EXPERT_GAIN};
pub use render::{render_cloud, CLOUD_POINTS, MARKER_POINTS, MARKER_RADIUS, POINTS_PER_LINK};
