use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flowmatch::Sampler;
use crate::numcore::Rng;
use crate::simenv::{distance, run_episode, EpisodeRecord, Observation, TaskSpec};

use super::model::FlowPolicy;

/// Terminal facts of one evaluation episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub success: bool,
    pub steps: usize,
    pub reached_goal: Option<usize>,
    pub targets: Vec<[f64; 2]>,
    pub final_ee: [f64; 2],
    pub error: Option<String>,
}

impl EpisodeOutcome {
    fn of(rec: &EpisodeRecord) -> Self {
        Self {
            success: rec.success,
            steps: rec.steps,
            reached_goal: rec.reached_goal,
            targets: rec.targets.clone(),
            final_ee: rec.final_ee,
            error: rec.error.clone(),
        }
    }

    /// Two-goal episode that ended near the midpoint of its goals without
    /// reaching either: the signature of averaged modes.
    pub fn is_midpoint_stall(&self, task: &TaskSpec, radius: f64) -> bool {
        if self.targets.len() != 2 || self.reached_goal.is_some() {
            return false;
        }
        let [a, b] = [self.targets[0], self.targets[1]];
        let mid = [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0];
        distance(self.final_ee, mid) < radius
            && distance(self.final_ee, a) >= task.tolerance
            && distance(self.final_ee, b) >= task.tolerance
    }
}

/// Sample mean and (n - 1) standard deviation.
pub fn mean_and_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Success statistics of one batch of evaluation episodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    /// Percent of successful episodes.
    pub success_rate: f64,
    pub episodes: usize,
    /// Field evaluations per act call (0 for non-learned policies).
    pub nfe: usize,
    pub act_calls: usize,
    /// Wall time per act call, milliseconds: encoding, sampling, denormalization.
    pub act_ms_mean: f64,
    pub act_ms_std: f64,
    /// Sampler-only part of the act time, milliseconds.
    pub sample_ms_mean: f64,
    pub sample_ms_std: f64,
    pub outcomes: Vec<EpisodeOutcome>,
}

impl EvalSummary {
    pub fn midpoint_stalls(&self, task: &TaskSpec, radius: f64) -> usize {
        self.outcomes.iter().filter(|o| o.is_midpoint_stall(task, radius)).count()
    }
}

/// Runs `n_episodes` with episode `i` seeded from stream `(seed, i)`.
pub fn evaluate_fn<F>(mut policy: F, task: &TaskSpec, n_episodes: usize, seed: u64) -> Result<EvalSummary>
where
    F: FnMut(&[Observation], &mut Rng) -> Result<Vec<[f64; 2]>>,
{
    if n_episodes == 0 {
        return Err(Error::Range("evaluation needs at least one episode".into()));
    }
    let outcomes: Vec<EpisodeOutcome> = (0..n_episodes)
        .map(|i| {
            let mut rng = Rng::with_stream(seed, i as u64);
            EpisodeOutcome::of(&run_episode(&mut policy, task, &mut rng, task.max_steps))
        })
        .collect();
    let ok = outcomes.iter().filter(|o| o.success).count();
    Ok(EvalSummary {
        success_rate: 100.0 * ok as f64 / n_episodes as f64,
        episodes: n_episodes,
        nfe: 0,
        act_calls: 0,
        act_ms_mean: 0.0,
        act_ms_std: 0.0,
        sample_ms_mean: 0.0,
        sample_ms_std: 0.0,
        outcomes,
    })
}

/// Evaluates a trained policy with the given sampler, timing every act call.
pub fn evaluate(policy: &FlowPolicy, task: &TaskSpec, n_episodes: usize, seed: u64, sampler: Sampler) -> Result<EvalSummary> {
    let mut act_ms = Vec::new();
    let mut sample_ms = Vec::new();
    let mut nfe = 0;
    let mut summary = evaluate_fn(
        |history: &[Observation], rng: &mut Rng| {
            let (out, timing) = policy.act_timed(history, rng, sampler)?;
            act_ms.push(timing.total * 1e3);
            sample_ms.push(timing.sampling * 1e3);
            nfe = out.nfe;
            Ok(out.actions)
        },
        task,
        n_episodes,
        seed,
    )?;
    (summary.act_ms_mean, summary.act_ms_std) = mean_and_std(&act_ms);
    (summary.sample_ms_mean, summary.sample_ms_std) = mean_and_std(&sample_ms);
    summary.act_calls = act_ms.len();
    summary.nfe = nfe;
    Ok(summary)
}

/// Mean of the five highest checkpoint success rates; `None` with fewer
/// than five checkpoints.
pub fn final_score(rates: &[f64]) -> Option<f64> {
    if rates.len() < 5 {
        return None;
    }
    let mut sorted = rates.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    Some(sorted[..5].iter().sum::<f64>() / 5.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointScore {
    pub epoch: usize,
    pub success_rate: f64,
}

/// Per-checkpoint success rates of one training run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub checkpoints: Vec<CheckpointScore>,
    pub nfe: usize,
    pub act_ms_mean: f64,
    pub act_ms_std: f64,
}

impl EvalReport {
    pub fn record(&mut self, epoch: usize, summary: &EvalSummary) {
        self.checkpoints.push(CheckpointScore {
            epoch,
            success_rate: summary.success_rate,
        });
        self.nfe = summary.nfe;
        self.act_ms_mean = summary.act_ms_mean;
        self.act_ms_std = summary.act_ms_std;
    }

    pub fn rates(&self) -> Vec<f64> {
        self.checkpoints.iter().map(|c| c.success_rate).collect()
    }

    pub fn final_score(&self) -> Option<f64> {
        final_score(&self.rates())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simenv::expert_policy;

    #[test]
    fn final_score_examples() {
        assert_eq!(final_score(&[10.0, 20.0, 30.0, 40.0]), None);
        assert_eq!(final_score(&[50.0, 100.0, 0.0, 90.0, 80.0, 70.0, 60.0]), Some(80.0));
    }

    #[test]
    fn final_score_matches_sort_oracle() {
        let mut rng = Rng::new(4);
        for _ in 0..200 {
            let n = 5 + rng.below(15);
            let rates: Vec<f64> = (0..n).map(|_| (rng.below(21) * 5) as f64).collect();
            let mut s = rates.clone();
            s.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let oracle = s.iter().rev().take(5).sum::<f64>() / 5.0;
            assert!((final_score(&rates).unwrap() - oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn expert_scores_high_and_zero_policy_low() {
        let task = TaskSpec::reach();
        let expert = evaluate_fn(expert_policy(&task), &task, 100, 5).unwrap();
        assert!(expert.success_rate >= 99.0);
        let zero = evaluate_fn(|_: &[Observation], _: &mut Rng| Ok(vec![[0.0, 0.0]]), &task, 100, 5).unwrap();
        assert!(zero.success_rate <= 2.0, "{}", zero.success_rate);
        let again = evaluate_fn(expert_policy(&task), &task, 100, 5).unwrap();
        assert_eq!(expert, again);
    }

    #[test]
    fn midpoint_stall_detection() {
        let task = TaskSpec::reach_two_goal();
        let mut o = EpisodeOutcome {
            success: false,
            steps: 100,
            reached_goal: None,
            targets: vec![[0.5, 0.4], [0.5, -0.4]],
            final_ee: [0.52, 0.03],
            error: None,
        };
        assert!(o.is_midpoint_stall(&task, 0.15));
        o.final_ee = [0.5, 0.39];
        o.reached_goal = Some(0);
        assert!(!o.is_midpoint_stall(&task, 0.15));
        assert!(evaluate_fn(expert_policy(&task), &task, 0, 1).is_err());
    }
}
