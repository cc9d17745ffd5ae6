use flowpolicy::flowmatch::Sampler;
use flowpolicy::numcore::Rng;
use flowpolicy::policy::{mean_and_std, FlowPolicy};
use flowpolicy::simenv::{env_reset, Observation, TaskSpec};

use crate::config::TimingConfig;
use crate::error::Result;

/// Per-call wall time of `act`, milliseconds.
#[derive(Debug, Clone, PartialEq)]
pub struct Timing {
    pub nfe: usize,
    pub calls: Vec<f64>,
    pub mean_ms: f64,
    pub std_ms: f64,
    /// Sampler-only share of each call.
    pub sample_mean_ms: f64,
}

/// Times `act` on a fixed two-frame history after warm-up calls. Covers
/// condition encoding, sampling and denormalization; no environment steps.
pub fn time_act(policy: &FlowPolicy, task: &TaskSpec, sampler: Sampler, timing: &TimingConfig, seed: u64) -> Result<Timing> {
    let mut rng = Rng::with_stream(seed, 0);
    let arm = env_reset(task, &mut rng);
    let obs = Observation::capture(task, &arm);
    let history = vec![obs.clone(), obs];
    let mut nfe = 0;
    for _ in 0..timing.warmup_calls {
        policy.act(&history, &mut rng, sampler)?;
    }
    let mut calls = Vec::with_capacity(timing.timed_calls);
    let mut sampling = Vec::with_capacity(timing.timed_calls);
    for _ in 0..timing.timed_calls {
        let (out, t) = policy.act_timed(&history, &mut rng, sampler)?;
        nfe = out.nfe;
        calls.push(t.total * 1e3);
        sampling.push(t.sampling * 1e3);
    }
    let (mean_ms, std_ms) = mean_and_std(&calls);
    Ok(Timing {
        nfe,
        mean_ms,
        std_ms,
        sample_mean_ms: mean_and_std(&sampling).0,
        calls,
    })
}
