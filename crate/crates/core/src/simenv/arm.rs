use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskVariant {
    Reach,
    ReachTwoGoal,
}

impl TaskVariant {
    pub fn name(&self) -> &'static str {
        match self {
            TaskVariant::Reach => "reach",
            TaskVariant::ReachTwoGoal => "reach-two-goal",
        }
    }

    pub fn goal_count(&self) -> usize {
        match self {
            TaskVariant::Reach => 1,
            TaskVariant::ReachTwoGoal => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub variant: TaskVariant,
    /// Episode cap in environment steps.
    pub max_steps: usize,
    /// Success radius around a goal, meters.
    pub tolerance: f64,
    pub link_lengths: [f64; 2],
    pub dt: f64,
    /// Joint velocity clip, rad/s.
    pub action_clip: f64,
    /// Reset range `[lo, hi]` of each joint angle.
    pub init_joints: [[f64; 2]; 2],
    /// Goals are drawn with radius in `[min, max]`.
    pub target_radius: [f64; 2],
    /// ... and polar angle in `[min, max]`.
    pub target_angle: [f64; 2],
    /// Minimum |y| of the goals in the two-goal variant.
    pub min_goal_offset: f64,
    /// Height of the rendered goal markers above the arm plane.
    pub marker_height: f64,
}

impl TaskSpec {
    pub fn reach() -> Self {
        Self {
            variant: TaskVariant::Reach,
            max_steps: 100,
            tolerance: 0.05,
            link_lengths: [0.5, 0.5],
            dt: 0.05,
            action_clip: 1.0,
            init_joints: [[-0.3, 0.3], [2.2, 2.7]],
            target_radius: [0.5, 0.9],
            target_angle: [-PI / 3.0, PI / 3.0],
            min_goal_offset: 0.2,
            marker_height: 0.5,
        }
    }

    pub fn reach_two_goal() -> Self {
        Self {
            variant: TaskVariant::ReachTwoGoal,
            ..Self::reach()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::Range("tolerance must be positive".into()));
        }
        if self.max_steps == 0 {
            return Err(Error::Range("episode cap must be at least 1".into()));
        }
        if self.link_lengths.iter().any(|&l| !(l > 0.0)) || !(self.dt > 0.0) || !(self.action_clip > 0.0) {
            return Err(Error::Range("link lengths, dt and action clip must be positive".into()));
        }
        let [lo, hi] = self.target_radius;
        let [l1, l2] = self.link_lengths;
        if !(lo < hi && lo >= (l1 - l2).abs() && hi <= l1 + l2) {
            return Err(Error::Range(format!(
                "goal radius range [{lo}, {hi}] must lie inside the reachable annulus [{}, {}]",
                (l1 - l2).abs(),
                l1 + l2
            )));
        }
        for [lo, hi] in self.init_joints {
            if !(lo <= hi && lo >= -PI && hi <= PI) {
                return Err(Error::Range(format!("joint reset range [{lo}, {hi}] must lie in [-pi, pi]")));
            }
        }
        let [alo, ahi] = self.target_angle;
        if !(alo < ahi && alo >= -PI && ahi <= PI) {
            return Err(Error::Range(format!("goal angle range [{alo}, {ahi}] must lie in [-pi, pi]")));
        }
        if self.variant == TaskVariant::ReachTwoGoal && !(self.min_goal_offset >= 0.0 && self.min_goal_offset < hi) {
            return Err(Error::Range("two-goal offset must be in [0, max radius)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmState {
    /// Joint angles in `(-pi, pi]`.
    pub q: [f64; 2],
    pub targets: Vec<[f64; 2]>,
    /// Goal the scripted expert pursues this episode.
    pub expert_goal: usize,
    pub step_index: usize,
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let r = (a + PI).rem_euclid(2.0 * PI) - PI;
    if r <= -PI {
        r + 2.0 * PI
    } else {
        r
    }
}

pub fn forward_kinematics(links: [f64; 2], q: [f64; 2]) -> [f64; 2] {
    let [l1, l2] = links;
    let (a, b) = (q[0], q[0] + q[1]);
    [l1 * a.cos() + l2 * b.cos(), l1 * a.sin() + l2 * b.sin()]
}

pub fn elbow_position(links: [f64; 2], q: [f64; 2]) -> [f64; 2] {
    [links[0] * q[0].cos(), links[0] * q[0].sin()]
}

/// Position Jacobian `d ee / d q`, row-major 2x2.
pub fn jacobian(links: [f64; 2], q: [f64; 2]) -> [[f64; 2]; 2] {
    let [l1, l2] = links;
    let (s1, c1) = q[0].sin_cos();
    let (s12, c12) = (q[0] + q[1]).sin_cos();
    [[-l1 * s1 - l2 * s12, -l2 * s12], [l1 * c1 + l2 * c12, l2 * c12]]
}

pub fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

impl ArmState {
    pub fn end_effector(&self, task: &TaskSpec) -> [f64; 2] {
        forward_kinematics(task.link_lengths, self.q)
    }

    /// Index of a goal within tolerance of the end effector, if any.
    pub fn reached_goal(&self, task: &TaskSpec) -> Option<usize> {
        let ee = self.end_effector(task);
        self.targets.iter().position(|&g| distance(ee, g) < task.tolerance)
    }

    /// Proprioceptive state `[cos q0, sin q0, cos q1, sin q1, ee_x, ee_y]`.
    pub fn robot_state(&self, task: &TaskSpec) -> Vec<f64> {
        let ee = self.end_effector(task);
        let (s0, c0) = self.q[0].sin_cos();
        let (s1, c1) = self.q[1].sin_cos();
        vec![c0, s0, c1, s1, ee[0], ee[1]]
    }
}

/// Width of [`ArmState::robot_state`].
pub const ROBOT_STATE_DIM: usize = 6;

fn sample_goal(task: &TaskSpec, rng: &mut Rng) -> [f64; 2] {
    let [lo, hi] = task.target_radius;
    let [alo, ahi] = task.target_angle;
    loop {
        let x = rng.uniform_in(-hi, hi);
        let y = rng.uniform_in(-hi, hi);
        let r = (x * x + y * y).sqrt();
        let a = y.atan2(x);
        if r < lo || r > hi || a < alo || a > ahi {
            continue;
        }
        if task.variant == TaskVariant::ReachTwoGoal && y.abs() < task.min_goal_offset {
            continue;
        }
        return [x, y];
    }
}

/// Uniform joint angles in the reset ranges and rejection-sampled goals. The
/// two-goal variant mirrors its goal across the x-axis and flips a coin for
/// the expert.
pub fn env_reset(task: &TaskSpec, rng: &mut Rng) -> ArmState {
    let mut q = [0.0; 2];
    for (q, [lo, hi]) in q.iter_mut().zip(task.init_joints) {
        // uniform_in covers [lo, hi); reflecting gives (lo, hi].
        *q = wrap_angle(lo + hi - rng.uniform_in(lo, hi));
    }
    let goal = sample_goal(task, rng);
    let (targets, expert_goal) = match task.variant {
        TaskVariant::Reach => (vec![goal], 0),
        TaskVariant::ReachTwoGoal => (vec![goal, [goal[0], -goal[1]]], usize::from(rng.coin())),
    };
    ArmState {
        q,
        targets,
        expert_goal,
        step_index: 0,
    }
}

/// `q <- wrap(q + clip(action) * dt)`.
pub fn env_step(task: &TaskSpec, state: &ArmState, action: [f64; 2]) -> ArmState {
    let c = task.action_clip;
    let mut next = state.clone();
    for (q, a) in next.q.iter_mut().zip(action) {
        *q = wrap_angle(*q + a.clamp(-c, c) * task.dt);
    }
    next.step_index += 1;
    next
}
