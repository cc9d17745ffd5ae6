use std::time::Instant;

use crate::error::{Error, Result};
use crate::flowmatch::{
    cfm_inputs, cfm_objective, consistency_inputs, consistency_objective, CountingField, CouplingBatch, MlpField,
    Sampler, SegmentSchedule, VelocityField,
};
use crate::numcore::{ParamGrads, Parameters, Rng, Tensor};
use crate::perception::{CloudEncoder, Normalizer, PointCloud};
use crate::simenv::{Observation, ROBOT_STATE_DIM};

use super::condition::{assemble_condition, build_condition, stack_history, visual_gradient};
use super::config::{Objective, PolicyConfig};
use super::ACTION_DIM;

/// Cloud encoder and conditional velocity field, trained jointly.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet {
    pub encoder: CloudEncoder,
    pub field: MlpField,
}

impl Parameters for PolicyNet {
    fn parameters(&self) -> Vec<&Tensor> {
        let mut p = self.encoder.parameters();
        p.extend(self.field.parameters());
        p
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.encoder.parameters_mut();
        p.extend(self.field.parameters_mut());
        p
    }
}

impl PolicyNet {
    pub fn new(cfg: &PolicyConfig, rng: &mut Rng) -> Result<Self> {
        let encoder = CloudEncoder::new(rng)?;
        let cond_dim = cfg.obs_horizon * (encoder.output_dim() + ROBOT_STATE_DIM);
        let field = MlpField::new(cfg.chunk_dim(), cond_dim, &cfg.hidden, rng)?;
        Ok(Self { encoder, field })
    }

    pub fn from_parts(encoder: CloudEncoder, field: MlpField, obs_horizon: usize) -> Result<Self> {
        if field.cond_dim != obs_horizon * (encoder.output_dim() + ROBOT_STATE_DIM) {
            return Err(Error::Dimension(format!(
                "field condition width {} does not match {obs_horizon} frames of encoder width {}",
                field.cond_dim,
                encoder.output_dim()
            )));
        }
        Ok(Self { encoder, field })
    }

    fn condition(&self, frames: &[&PointCloud], states: &Tensor, horizon: usize) -> Result<Tensor> {
        assemble_condition(&self.encoder.encode(frames)?, states, horizon)
    }

    /// Loss and gradients (encoder first, then field) for one batch.
    ///
    /// `frames` holds `horizon` downsampled clouds per row, oldest first;
    /// `states` the matching normalized robot states side by side; `coupling`
    /// the noise/chunk pairs with times and segments (its condition is
    /// ignored). `target` only matters for the consistency objective and
    /// receives no gradient.
    #[allow(clippy::too_many_arguments)]
    pub fn objective(
        &self,
        target: &PolicyNet,
        objective: Objective,
        sched: &SegmentSchedule,
        frames: &[&PointCloud],
        states: &Tensor,
        coupling: &CouplingBatch,
        horizon: usize,
    ) -> Result<(f64, ParamGrads)> {
        let (visual, enc_cache) = self.encoder.forward(frames)?;
        let cond = assemble_condition(&visual, states, horizon)?;
        let (loss, dv, field_cache) = match objective {
            Objective::Cfm => {
                let (x_t, u) = cfm_inputs(coupling)?;
                let (v, cache) = self.field.forward(&coupling.t, &x_t, Some(&cond))?;
                let (loss, dv) = cfm_objective(&v, &u)?;
                (loss, dv, cache)
            }
            Objective::Consistency => {
                let inputs = consistency_inputs(coupling, sched)?;
                let (v, cache) = self.field.forward(&coupling.t, &inputs.x_t, Some(&cond))?;
                let target_cond = target.condition(frames, states, horizon)?;
                let v_target = target.field.velocity(&inputs.t_next, &inputs.x_next, Some(&target_cond))?;
                let (loss, dv) = consistency_objective(&v, &v_target, &inputs, coupling, sched)?;
                (loss, dv, cache)
            }
        };
        let (field_grads, cond_grad) = self.field.backward(&field_cache, &dv)?;
        let cond_grad = cond_grad.ok_or_else(|| Error::Contract("policy field must be conditional".into()))?;
        let vis_grad = visual_gradient(&cond_grad, horizon, self.encoder.output_dim());
        let enc_grads = self.encoder.backward(&enc_cache, &vis_grad)?;
        Ok((loss, enc_grads.concat(field_grads)))
    }
}

/// Flattens `H_p` actions time-major into one generative sample.
pub fn flatten_chunk(actions: &[[f64; 2]]) -> Vec<f64> {
    actions.iter().flatten().copied().collect()
}

pub fn unflatten_chunk(chunk: &[f64]) -> Vec<[f64; 2]> {
    chunk.chunks_exact(ACTION_DIM).map(|a| [a[0], a[1]]).collect()
}

/// One `act` call's output.
#[derive(Debug, Clone, PartialEq)]
pub struct ActOutput {
    /// The executed prefix of the chunk, denormalized.
    pub actions: Vec<[f64; 2]>,
    /// The full predicted chunk, denormalized.
    pub chunk: Vec<[f64; 2]>,
    pub nfe: usize,
}

/// Wall time split of a timed `act` call, seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActTiming {
    pub total: f64,
    /// Sampler only, excluding condition encoding.
    pub sampling: f64,
}

/// A trained visuomotor policy: networks, normalizers and the settings
/// needed to act.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowPolicy {
    pub config: PolicyConfig,
    pub net: PolicyNet,
    pub ema: PolicyNet,
    pub state_norm: Normalizer,
    pub action_norm: Normalizer,
}

impl FlowPolicy {
    pub fn acting_net(&self) -> &PolicyNet {
        if self.config.use_ema {
            &self.ema
        } else {
            &self.net
        }
    }

    /// Condition row for the latest frames of `history`.
    pub fn condition(&self, history: &[Observation]) -> Result<Tensor> {
        let h = self.config.obs_horizon;
        let frames = stack_history(history, h)?;
        build_condition(
            &self.acting_net().encoder,
            &self.state_norm,
            self.config.fps_points,
            &frames,
            h,
        )
    }

    /// Draws source noise in chunk space, transports it with `sampler`, and
    /// returns the first `H_a` denormalized actions.
    pub fn act(&self, history: &[Observation], rng: &mut Rng, sampler: Sampler) -> Result<ActOutput> {
        Ok(self.act_timed(history, rng, sampler)?.0)
    }

    pub fn act_timed(&self, history: &[Observation], rng: &mut Rng, sampler: Sampler) -> Result<(ActOutput, ActTiming)> {
        let start = Instant::now();
        let cond = self.condition(history)?;
        let x0 = Tensor::new(vec![1, self.config.chunk_dim()], rng.gaussian_vec(self.config.chunk_dim()))?;
        let sample_start = Instant::now();
        let (x, nfe) = self.sample_chunk(&x0, &cond, sampler)?;
        let sampling = sample_start.elapsed().as_secs_f64();
        let out = self.finish(x.data(), nfe)?;
        let total = start.elapsed().as_secs_f64();
        Ok((out, ActTiming { total, sampling }))
    }

    /// Runs `sampler` from `x0` under a prepared condition; returns the
    /// normalized chunk and the field evaluations spent.
    pub fn sample_chunk(&self, x0: &Tensor, cond: &Tensor, sampler: Sampler) -> Result<(Tensor, usize)> {
        let field = CountingField::new(&self.acting_net().field);
        let out = sampler.run(&field, x0, Some(cond), self.config.schedule.segments)?;
        Ok((out.x, field.calls()))
    }

    fn finish(&self, normalized: &[f64], nfe: usize) -> Result<ActOutput> {
        if normalized.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("policy produced a non-finite action chunk".into()));
        }
        let chunk = unflatten_chunk(&self.action_norm.denormalize_blocks(normalized));
        let actions = chunk[..self.config.execution_horizon].to_vec();
        Ok(ActOutput { actions, chunk, nfe })
    }

    /// Plain velocity query on the acting field, for diagnostics.
    pub fn velocity(&self, t: &[f64], x: &Tensor, cond: &Tensor) -> Result<Tensor> {
        self.acting_net().field.velocity(t, x, Some(cond))
    }
}
