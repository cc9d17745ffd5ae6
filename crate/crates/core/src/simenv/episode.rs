use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::numcore::Rng;
use crate::perception::PointCloud;

use super::arm::{env_reset, env_step, ArmState, TaskSpec};
use super::expert::expert_action;
use super::render::render_cloud;

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub robot_state: Vec<f64>,
    pub cloud: PointCloud,
    /// Simulator ground truth; only the scripted expert reads it.
    pub arm: ArmState,
}

impl Observation {
    pub fn capture(task: &TaskSpec, arm: &ArmState) -> Self {
        Self {
            robot_state: arm.robot_state(task),
            cloud: render_cloud(task, arm),
            arm: arm.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    /// Robot state before each executed action.
    pub states: Vec<Vec<f64>>,
    pub clouds: Vec<PointCloud>,
    /// Executed (clipped) actions.
    pub actions: Vec<[f64; 2]>,
    pub success: bool,
    pub steps: usize,
    pub targets: Vec<[f64; 2]>,
    pub expert_goal: usize,
    /// Goal within tolerance when the episode ended, if any.
    pub reached_goal: Option<usize>,
    pub final_ee: [f64; 2],
    pub error: Option<String>,
}

impl EpisodeRecord {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Runs one episode with receding-horizon execution.
///
/// `policy` sees every observation so far (latest last) and returns an
/// action chunk, which is executed in full unless the episode ends first.
/// Success is checked after reset and after every step.
pub fn run_episode<F>(mut policy: F, task: &TaskSpec, rng: &mut Rng, max_steps: usize) -> EpisodeRecord
where
    F: FnMut(&[Observation], &mut Rng) -> Result<Vec<[f64; 2]>>,
{
    let mut arm = env_reset(task, rng);
    let mut history = vec![Observation::capture(task, &arm)];
    let mut actions = Vec::new();
    let mut reached = arm.reached_goal(task);
    let mut error = None;
    'outer: while reached.is_none() && actions.len() < max_steps {
        let chunk = match policy(&history, rng) {
            Ok(c) if c.is_empty() => {
                error = Some("policy returned an empty action chunk".to_string());
                break;
            }
            Ok(c) => c,
            Err(e) => {
                error = Some(e.to_string());
                break;
            }
        };
        for a in chunk {
            if !a.iter().all(|v| v.is_finite()) {
                error = Some("non-finite action".to_string());
                break 'outer;
            }
            let c = task.action_clip;
            let a = [a[0].clamp(-c, c), a[1].clamp(-c, c)];
            arm = env_step(task, &arm, a);
            actions.push(a);
            reached = arm.reached_goal(task);
            if reached.is_some() || actions.len() >= max_steps {
                break 'outer;
            }
            history.push(Observation::capture(task, &arm));
        }
    }
    history.truncate(actions.len());
    let (states, clouds) = history.into_iter().map(|o| (o.robot_state, o.cloud)).unzip();
    EpisodeRecord {
        states,
        clouds,
        steps: actions.len(),
        actions,
        success: error.is_none() && reached.is_some(),
        targets: arm.targets.clone(),
        expert_goal: arm.expert_goal,
        reached_goal: reached,
        final_ee: arm.end_effector(task),
        error,
    }
}

/// The scripted expert as a one-action-per-call policy.
pub fn expert_policy(task: &TaskSpec) -> impl FnMut(&[Observation], &mut Rng) -> Result<Vec<[f64; 2]>> + '_ {
    move |history, _| {
        let latest = history.last().expect("history always holds the current frame");
        Ok(vec![expert_action(task, &latest.arm)])
    }
}
