use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use flowpolicy::flowmatch::Sampler;
use flowpolicy::policy::{LrSchedule, PolicyConfig};
use flowpolicy::simenv::TaskSpec;

use crate::error::{BenchError, Result};

/// Timing harness settings for `eval` and `bench`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimingConfig {
    pub warmup_calls: usize,
    pub timed_calls: usize,
}

impl Default for TimingConfig {
    fn default() -> Self {
        Self {
            warmup_calls: 20,
            timed_calls: 200,
        }
    }
}

/// Everything one command needs; loaded from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: TaskSpec,
    #[serde(default)]
    pub policy: PolicyConfig,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_sampler")]
    pub sampler: Sampler,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub timing: TimingConfig,
    /// Expert attempts allowed per requested demo before demo generation
    /// gives up.
    #[serde(default = "default_retries")]
    pub demo_retries: usize,
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

fn default_sampler() -> Sampler {
    Sampler::OneStep
}

fn default_out() -> PathBuf {
    PathBuf::from("runs")
}

fn default_retries() -> usize {
    5
}

impl RunConfig {
    /// Desk-scale settings: a two-layer field network, many small batches,
    /// a cosine-decayed rate and a coarse consistency step.
    pub fn reference(task: TaskSpec) -> Self {
        let mut policy = PolicyConfig {
            epochs: 600,
            checkpoint_every: 20,
            hidden: vec![128, 128],
            batch_size: 16,
            lr_schedule: LrSchedule::Cosine,
            ..Default::default()
        };
        policy.optimizer.learning_rate = 1e-3;
        policy.schedule.alpha = 1e-5;
        policy.schedule.delta_t = 0.1;
        Self {
            task,
            policy,
            seeds: default_seeds(),
            sampler: default_sampler(),
            out_dir: default_out(),
            timing: TimingConfig::default(),
            demo_retries: default_retries(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| BenchError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| BenchError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            BenchError::Config(msg) => BenchError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config is always representable as TOML")
    }

    /// Hex SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |e: flowpolicy::Error| BenchError::Config(e.to_string());
        self.task.validate().map_err(bad)?;
        self.policy.validate().map_err(bad)?;
        if self.seeds.is_empty() {
            return Err(BenchError::Config("at least one seed is required".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(BenchError::Config("seeds must be distinct".into()));
        }
        if self.timing.timed_calls == 0 {
            return Err(BenchError::Config("timing.timed_calls must be at least 1".into()));
        }
        if self.demo_retries == 0 {
            return Err(BenchError::Config("demo_retries must be at least 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_is_identity() {
        let cfg = RunConfig::reference(TaskSpec::reach_two_goal());
        let text = cfg.to_toml();
        let back = RunConfig::from_toml(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_toml(), text);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn unknown_keys_rejected() {
        let mut text = RunConfig::reference(TaskSpec::reach()).to_toml();
        text.push_str("\n[extra]\nfoo = 1\n");
        assert!(matches!(RunConfig::from_toml(&text), Err(BenchError::Config(_))));
        let text = RunConfig::reference(TaskSpec::reach())
            .to_toml()
            .replace("batch_size = 16", "batch_size = 16\nbatchsize = 3");
        assert!(matches!(RunConfig::from_toml(&text), Err(BenchError::Config(_))));
    }

    #[test]
    fn validation_errors() {
        let mut cfg = RunConfig::reference(TaskSpec::reach());
        cfg.policy.demo_count = 0;
        assert!(matches!(cfg.validate(), Err(BenchError::Config(_))));
        let mut cfg = RunConfig::reference(TaskSpec::reach());
        cfg.seeds = vec![1, 1];
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::reference(TaskSpec::reach());
        cfg.seeds.clear();
        assert!(cfg.validate().is_err());
        assert_eq!(BenchError::Config(String::new()).exit_code(), 1);
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::reference(TaskSpec::reach());
        let mut b = a.clone();
        b.policy.epochs += 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
