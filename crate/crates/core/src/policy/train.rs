use crate::error::{Error, Result};
use crate::flowmatch::{CouplingBatch, EmaParams};
use crate::numcore::{adamw_step, OptimizerState, Rng, Tensor};
use crate::perception::{Normalizer, PointCloud};
use crate::simenv::EpisodeRecord;

use super::condition::downsample;
use super::config::{Objective, PolicyConfig};
use super::model::{flatten_chunk, FlowPolicy, PolicyNet};

#[derive(Debug, Clone)]
struct Window {
    frames: Vec<usize>,
    states: Vec<f64>,
    chunk: Vec<f64>,
}

/// Sliding-window training pairs cut from demonstrations.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    clouds: Vec<PointCloud>,
    windows: Vec<Window>,
    pub state_norm: Normalizer,
    pub action_norm: Normalizer,
}

impl TrainingSet {
    /// Fits normalizers on every demo state and action, then builds one
    /// window per demo step: the `obs_horizon` latest frames (the first frame
    /// repeated at the start) and the next `H_p` actions, padded past the end
    /// of the demo by repeating its final action.
    pub fn new(demos: &[EpisodeRecord], cfg: &PolicyConfig) -> Result<Self> {
        if demos.is_empty() {
            return Err(Error::Contract("no demonstrations to train on".into()));
        }
        if let Some(d) = demos.iter().find(|d| d.states.len() != d.actions.len() || d.clouds.len() != d.actions.len()) {
            return Err(Error::Contract(format!(
                "demo with {} states, {} clouds, {} actions",
                d.states.len(),
                d.clouds.len(),
                d.actions.len()
            )));
        }
        let states: Vec<&Vec<f64>> = demos.iter().flat_map(|d| &d.states).collect();
        let actions: Vec<&[f64; 2]> = demos.iter().flat_map(|d| &d.actions).collect();
        if actions.is_empty() {
            return Err(Error::Contract("demonstrations contain no steps".into()));
        }
        let state_norm = Normalizer::fit(&states)?;
        let action_norm = Normalizer::fit(&actions.iter().map(|a| a.as_slice()).collect::<Vec<_>>())?;

        let h = cfg.obs_horizon;
        let mut clouds = Vec::new();
        let mut windows = Vec::new();
        for d in demos {
            let base = clouds.len();
            for c in &d.clouds {
                clouds.push(downsample(c, cfg.fps_points)?);
            }
            let n = d.actions.len();
            for i in 0..n {
                let frames: Vec<usize> = (0..h).map(|k| base + (i + k + 1).saturating_sub(h)).collect();
                let st = frames
                    .iter()
                    .flat_map(|&f| state_norm.normalize(&d.states[f - base]))
                    .collect();
                let acts: Vec<[f64; 2]> = (0..cfg.prediction_horizon).map(|k| d.actions[(i + k).min(n - 1)]).collect();
                let chunk = action_norm.normalize_blocks(&flatten_chunk(&acts));
                windows.push(Window {
                    frames,
                    states: st,
                    chunk,
                });
            }
        }
        Ok(Self {
            clouds,
            windows,
            state_norm,
            action_norm,
        })
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    /// Normalized target chunk of window `i`.
    pub fn chunk(&self, i: usize) -> &[f64] {
        &self.windows[i].chunk
    }

    /// Frames, side-by-side states and target chunks for the given windows.
    pub fn batch(&self, indices: &[usize]) -> Result<(Vec<&PointCloud>, Tensor, Tensor)> {
        let frames = indices
            .iter()
            .flat_map(|&i| self.windows[i].frames.iter().map(|&f| &self.clouds[f]))
            .collect();
        let states: Vec<&[f64]> = indices.iter().map(|&i| self.windows[i].states.as_slice()).collect();
        let chunks: Vec<&[f64]> = indices.iter().map(|&i| self.windows[i].chunk.as_slice()).collect();
        Ok((frames, Tensor::from_rows(&states)?, Tensor::from_rows(&chunks)?))
    }
}

/// Resumable optimizer loop. Every epoch draws its randomness from a stream
/// keyed by `(seed, epoch)`, so a resumed run matches an uninterrupted one.
#[derive(Debug, Clone)]
pub struct Trainer {
    cfg: PolicyConfig,
    seed: u64,
    data: TrainingSet,
    net: PolicyNet,
    ema: EmaParams<PolicyNet>,
    opt: OptimizerState,
    epoch: usize,
}

impl Trainer {
    pub fn new(demos: &[EpisodeRecord], cfg: &PolicyConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let data = TrainingSet::new(demos, cfg)?;
        let net = PolicyNet::new(cfg, &mut Rng::with_stream(seed, 0))?;
        let ema = EmaParams::new(&net, cfg.ema_decay)?;
        let opt = OptimizerState::new(&net, cfg.optimizer.clone());
        Ok(Self {
            cfg: cfg.clone(),
            seed,
            data,
            net,
            ema,
            opt,
            epoch: 0,
        })
    }

    /// Continues from a saved policy and optimizer after `epoch` epochs.
    /// Normalizers are refit from `demos`; they must match the saved ones.
    pub fn resume(demos: &[EpisodeRecord], policy: FlowPolicy, opt: OptimizerState, epoch: usize, seed: u64) -> Result<Self> {
        policy.config.validate()?;
        let data = TrainingSet::new(demos, &policy.config)?;
        if data.state_norm != policy.state_norm || data.action_norm != policy.action_norm {
            return Err(Error::Contract("checkpoint normalizers do not match these demonstrations".into()));
        }
        let ema = EmaParams::from_shadow(policy.ema, policy.config.ema_decay)?;
        Ok(Self {
            cfg: policy.config,
            seed,
            data,
            net: policy.net,
            ema,
            opt,
            epoch,
        })
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.cfg
    }

    pub fn data(&self) -> &TrainingSet {
        &self.data
    }

    pub fn optimizer(&self) -> &OptimizerState {
        &self.opt
    }

    pub fn policy(&self) -> FlowPolicy {
        FlowPolicy {
            config: self.cfg.clone(),
            net: self.net.clone(),
            ema: self.ema.shadow().clone(),
            state_norm: self.data.state_norm.clone(),
            action_norm: self.data.action_norm.clone(),
        }
    }

    /// One optimizer step on the given windows with the given source noise
    /// stream; returns the batch loss.
    pub fn step(&mut self, indices: &[usize], rng: &mut Rng) -> Result<f64> {
        let (frames, states, x1) = self.data.batch(indices)?;
        let coupling = match self.cfg.objective {
            Objective::Consistency => CouplingBatch::draw_consistency(x1, None, &self.cfg.schedule, rng)?,
            Objective::Cfm => CouplingBatch::draw_cfm(x1, None, self.cfg.schedule.epsilon, rng)?,
        };
        let (loss, grads) = self.net.objective(
            self.ema.shadow(),
            self.cfg.objective,
            &self.cfg.schedule,
            &frames,
            &states,
            &coupling,
            self.cfg.obs_horizon,
        )?;
        adamw_step(&mut self.net, &grads, &mut self.opt)?;
        self.ema.update(&self.net)?;
        Ok(loss)
    }

    /// One shuffled pass over all windows; returns the mean batch loss.
    pub fn run_epoch(&mut self) -> Result<f64> {
        let mut rng = Rng::with_stream(self.seed, 1 + self.epoch as u64);
        self.opt.config.learning_rate =
            self.cfg.optimizer.learning_rate * self.cfg.lr_schedule.factor(self.epoch, self.cfg.epochs);
        let mut order: Vec<usize> = (0..self.data.len()).collect();
        rng.shuffle(&mut order);
        let mut total = 0.0;
        let mut batches = 0;
        for idx in order.chunks(self.cfg.batch_size) {
            total += self.step(idx, &mut rng)?;
            batches += 1;
        }
        self.epoch += 1;
        Ok(total / batches as f64)
    }
}

/// Result of [`train_policy`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub policy: FlowPolicy,
    /// Mean loss of every epoch.
    pub losses: Vec<f64>,
}

/// Trains for `cfg.epochs` epochs, calling `on_checkpoint(epoch, policy)`
/// after every `cfg.checkpoint_every`-th epoch.
pub fn train_policy<C>(demos: &[EpisodeRecord], cfg: &PolicyConfig, seed: u64, mut on_checkpoint: C) -> Result<TrainOutcome>
where
    C: FnMut(usize, &FlowPolicy) -> Result<()>,
{
    let mut trainer = Trainer::new(demos, cfg, seed)?;
    let mut losses = Vec::with_capacity(cfg.epochs);
    while trainer.epoch() < cfg.epochs {
        losses.push(trainer.run_epoch()?);
        if trainer.epoch() % cfg.checkpoint_every == 0 {
            on_checkpoint(trainer.epoch(), &trainer.policy())?;
        }
    }
    Ok(TrainOutcome {
        policy: trainer.policy(),
        losses,
    })
}
