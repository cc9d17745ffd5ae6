use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flowmatch::SegmentSchedule;
use crate::numcore::AdamWConfig;

/// Training objective for the velocity field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    /// Segmented consistency flow matching against an EMA target.
    Consistency,
    /// Plain conditional flow matching.
    Cfm,
}

impl Objective {
    pub fn name(&self) -> &'static str {
        match self {
            Objective::Consistency => "consistency",
            Objective::Cfm => "cfm",
        }
    }
}

/// Learning-rate schedule over the whole run, applied per epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    Constant,
    /// Half-cosine decay from the base rate to zero at the final epoch.
    Cosine,
}

impl LrSchedule {
    /// Multiplier on the base rate for `epoch` of `epochs`.
    pub fn factor(&self, epoch: usize, epochs: usize) -> f64 {
        match self {
            LrSchedule::Constant => 1.0,
            LrSchedule::Cosine => {
                let p = epoch.min(epochs) as f64 / epochs.max(1) as f64;
                0.5 * (1.0 + (std::f64::consts::PI * p).cos())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    pub obs_horizon: usize,
    /// Predicted actions per chunk.
    pub prediction_horizon: usize,
    /// Actions executed from each chunk before re-planning.
    pub execution_horizon: usize,
    pub schedule: SegmentSchedule,
    pub optimizer: AdamWConfig,
    pub lr_schedule: LrSchedule,
    pub batch_size: usize,
    pub ema_decay: f64,
    pub epochs: usize,
    pub demo_count: usize,
    /// Epochs between evaluation checkpoints.
    pub checkpoint_every: usize,
    pub eval_episodes: usize,
    /// Hidden widths of the velocity MLP.
    pub hidden: Vec<usize>,
    /// Points kept per frame after farthest point sampling.
    pub fps_points: usize,
    pub objective: Objective,
    /// Act with the EMA parameters instead of the live ones.
    pub use_ema: bool,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            obs_horizon: 2,
            prediction_horizon: 8,
            execution_horizon: 4,
            schedule: SegmentSchedule::default(),
            optimizer: AdamWConfig::default(),
            lr_schedule: LrSchedule::Constant,
            batch_size: 128,
            ema_decay: 0.95,
            epochs: 3000,
            demo_count: 10,
            checkpoint_every: 200,
            eval_episodes: 20,
            hidden: vec![256, 256, 256],
            fps_points: 32,
            objective: Objective::Consistency,
            use_ema: true,
        }
    }
}

impl PolicyConfig {
    /// Width of one flattened action chunk.
    pub fn chunk_dim(&self) -> usize {
        self.prediction_horizon * super::ACTION_DIM
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("obs_horizon", self.obs_horizon),
            ("prediction_horizon", self.prediction_horizon),
            ("execution_horizon", self.execution_horizon),
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
            ("demo_count", self.demo_count),
            ("checkpoint_every", self.checkpoint_every),
            ("eval_episodes", self.eval_episodes),
            ("fps_points", self.fps_points),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Range(format!("{name} must be at least 1")));
            }
        }
        if self.execution_horizon > self.prediction_horizon {
            return Err(Error::Range(format!(
                "execution horizon {} exceeds prediction horizon {}",
                self.execution_horizon, self.prediction_horizon
            )));
        }
        if !(self.ema_decay > 0.0 && self.ema_decay < 1.0) {
            return Err(Error::Range(format!("ema_decay {} outside (0, 1)", self.ema_decay)));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::Range("hidden widths must be a non-empty list of positive sizes".into()));
        }
        let o = &self.optimizer;
        if !(o.learning_rate > 0.0) || !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) {
            return Err(Error::Range("optimizer needs lr > 0 and betas in [0, 1)".into()));
        }
        if !(o.eps > 0.0) || !(o.weight_decay >= 0.0) {
            return Err(Error::Range("optimizer needs eps > 0 and weight_decay >= 0".into()));
        }
        self.schedule.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let c = PolicyConfig::default();
        c.validate().unwrap();
        assert_eq!(c.chunk_dim(), 16);
        assert_eq!(c.schedule.segments, 2);
    }

    #[test]
    fn cosine_schedule_endpoints() {
        let c = LrSchedule::Cosine;
        assert_eq!(c.factor(0, 10), 1.0);
        assert!((c.factor(5, 10) - 0.5).abs() < 1e-15);
        assert!(c.factor(10, 10).abs() < 1e-15);
        assert_eq!(LrSchedule::Constant.factor(7, 10), 1.0);
    }

    #[test]
    fn horizon_invariants() {
        let c = PolicyConfig {
            execution_horizon: 9,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = PolicyConfig {
            execution_horizon: 0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = PolicyConfig {
            ema_decay: 1.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }
}
