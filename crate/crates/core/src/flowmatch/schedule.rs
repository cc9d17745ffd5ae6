use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Rng;

/// Segment layout and weights for the multi-segment consistency objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentSchedule {
    /// Number of equal-width time segments `K`.
    pub segments: usize,
    /// Offset between the live and target evaluation times.
    pub delta_t: f64,
    /// Weight of the velocity-agreement term.
    pub alpha: f64,
    /// Per-segment weight of the endpoint-agreement term.
    pub lambda: Vec<f64>,
    /// Margin kept away from `t = 0` and `t = 1` when drawing times.
    pub epsilon: f64,
}

impl Default for SegmentSchedule {
    fn default() -> Self {
        Self::uniform(2)
    }
}

impl SegmentSchedule {
    /// `segments` segments with the default offsets and unit weights.
    pub fn uniform(segments: usize) -> Self {
        Self {
            segments,
            delta_t: 1e-2,
            alpha: 1.0,
            lambda: vec![1.0; segments],
            epsilon: 1e-3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.segments;
        if k == 0 {
            return Err(Error::Range("segment count must be at least 1".into()));
        }
        if !(self.delta_t > 0.0 && self.delta_t < 1.0 / k as f64) {
            return Err(Error::Range(format!(
                "delta_t {} must lie in (0, 1/K = {})",
                self.delta_t,
                1.0 / k as f64
            )));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Range(format!("alpha must be positive, got {}", self.alpha)));
        }
        if self.lambda.len() != k {
            return Err(Error::Range(format!(
                "expected {k} segment weights, got {}",
                self.lambda.len()
            )));
        }
        if self.lambda.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(Error::Range("segment weights must be positive".into()));
        }
        if !(0.0..0.5).contains(&self.epsilon) {
            return Err(Error::Range(format!("epsilon {} outside [0, 0.5)", self.epsilon)));
        }
        for i in 0..k {
            let (lo, hi) = self.time_range(i);
            if lo >= hi {
                return Err(Error::Range(format!("segment {i} has an empty sampling interval")));
            }
        }
        Ok(())
    }

    pub fn start(&self, segment: usize) -> f64 {
        segment as f64 / self.segments as f64
    }

    pub fn end(&self, segment: usize) -> f64 {
        (segment + 1) as f64 / self.segments as f64
    }

    /// Interval from which training times for `segment` are drawn:
    /// `[i/K, (i+1)/K - delta_t]` intersected with `[epsilon, 1 - epsilon]`.
    pub fn time_range(&self, segment: usize) -> (f64, f64) {
        let lo = self.start(segment).max(self.epsilon);
        let hi = (self.end(segment) - self.delta_t).min(1.0 - self.epsilon);
        (lo, hi)
    }

    /// Segment containing `t`; the right boundary belongs to the earlier
    /// segment so that `t = 1` maps to `K - 1`.
    pub fn segment_of(&self, t: f64) -> usize {
        let k = self.segments;
        let i = (t * k as f64).floor() as usize;
        if i >= k {
            k - 1
        } else {
            i
        }
    }

    /// Draws a segment uniformly, then a time uniformly within its range.
    pub fn draw(&self, rng: &mut Rng) -> (usize, f64) {
        let segment = rng.below(self.segments);
        let (lo, hi) = self.time_range(segment);
        (segment, rng.uniform_in(lo, hi))
    }
}
