use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::field::VelocityField;
use super::path::extrapolate;
use crate::error::{Error, Result};
use crate::numcore::Tensor;

/// Generated samples and the number of batched field evaluations used.
#[derive(Debug, Clone, PartialEq)]
pub struct Sampled {
    pub x: Tensor,
    pub nfe: usize,
}

fn checked(x: Tensor, nfe: usize) -> Result<Sampled> {
    x.check_finite("sampler output")?;
    Ok(Sampled { x, nfe })
}

/// `x1 = x0 + v(0, x0)`: a single field evaluation.
pub fn sample_onestep<F: VelocityField + ?Sized>(field: &F, x0: &Tensor, cond: Option<&Tensor>) -> Result<Sampled> {
    let v = field.velocity(&vec![0.0; x0.rows()], x0, cond)?;
    checked(extrapolate(x0, &v, &vec![1.0; x0.rows()]), 1)
}

/// Chains the segment extrapolations `x <- x + (1/K) v(i/K, x)`.
pub fn sample_segments<F: VelocityField + ?Sized>(
    field: &F,
    x0: &Tensor,
    cond: Option<&Tensor>,
    segments: usize,
) -> Result<Sampled> {
    if segments == 0 {
        return Err(Error::Range("segment count must be at least 1".into()));
    }
    let n = x0.rows();
    let mut x = x0.clone();
    for i in 0..segments {
        let t = i as f64 / segments as f64;
        let span = (i + 1) as f64 / segments as f64 - t;
        let v = field.velocity(&vec![t; n], &x, cond)?;
        x = extrapolate(&x, &v, &vec![span; n]);
    }
    checked(x, segments)
}

/// Forward Euler on `dx/dt = v(t, x)` with `steps` uniform steps.
pub fn sample_euler<F: VelocityField + ?Sized>(
    field: &F,
    x0: &Tensor,
    cond: Option<&Tensor>,
    steps: usize,
) -> Result<Sampled> {
    if steps == 0 {
        return Err(Error::Range("Euler needs at least one step".into()));
    }
    let n = x0.rows();
    let h = 1.0 / steps as f64;
    let mut x = x0.clone();
    for k in 0..steps {
        let v = field.velocity(&vec![k as f64 * h; n], &x, cond)?;
        x = extrapolate(&x, &v, &vec![h; n]);
    }
    checked(x, steps)
}

/// Sampler selection as written on the command line and in configs:
/// `onestep`, `segments`, or `euler-N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Sampler {
    OneStep,
    /// One jump per trained segment; the segment count comes from the model.
    Segments,
    Euler(usize),
}

impl Sampler {
    /// Field evaluations per sample for a model trained with `segments`.
    pub fn nfe(&self, segments: usize) -> usize {
        match *self {
            Sampler::OneStep => 1,
            Sampler::Segments => segments,
            Sampler::Euler(n) => n,
        }
    }

    pub fn run<F: VelocityField + ?Sized>(
        &self,
        field: &F,
        x0: &Tensor,
        cond: Option<&Tensor>,
        segments: usize,
    ) -> Result<Sampled> {
        match *self {
            Sampler::OneStep => sample_onestep(field, x0, cond),
            Sampler::Segments => sample_segments(field, x0, cond, segments),
            Sampler::Euler(n) => sample_euler(field, x0, cond, n),
        }
    }
}

impl fmt::Display for Sampler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Sampler::OneStep => write!(f, "onestep"),
            Sampler::Segments => write!(f, "segments"),
            Sampler::Euler(n) => write!(f, "euler-{n}"),
        }
    }
}

impl FromStr for Sampler {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "onestep" => Ok(Sampler::OneStep),
            "segments" => Ok(Sampler::Segments),
            _ => {
                let n = s
                    .strip_prefix("euler-")
                    .and_then(|n| n.parse::<usize>().ok())
                    .filter(|&n| n > 0)
                    .ok_or_else(|| Error::Range(format!("unknown sampler '{s}'")))?;
                Ok(Sampler::Euler(n))
            }
        }
    }
}

impl TryFrom<String> for Sampler {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Sampler> for String {
    fn from(s: Sampler) -> String {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowmatch::field::{ConstantField, CountingField, PointTargetField};
    use crate::numcore::Rng;

    fn noise(rows: usize, d: usize, seed: u64) -> Tensor {
        let mut rng = Rng::new(seed);
        Tensor::new(vec![rows, d], rng.gaussian_vec(rows * d)).unwrap()
    }

    #[test]
    fn zero_field_returns_source() {
        let x0 = noise(4, 3, 1);
        assert_eq!(sample_onestep(&ConstantField(vec![0.0; 3]), &x0, None).unwrap().x, x0);
    }

    #[test]
    fn constant_field_transport_all_samplers() {
        let c = vec![0.3, -1.1];
        let x0 = noise(6, 2, 2);
        let expect: Vec<f64> = (0..6).flat_map(|r| x0.row(r).iter().zip(&c).map(|(a, b)| a + b).collect::<Vec<_>>()).collect();
        let f = ConstantField(c.clone());
        for out in [
            sample_onestep(&f, &x0, None).unwrap(),
            sample_segments(&f, &x0, None, 3).unwrap(),
            sample_euler(&f, &x0, None, 7).unwrap(),
        ] {
            for (a, b) in out.x.data().iter().zip(&expect) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn point_target_oracle_lands_on_target() {
        let target = vec![0.5, -0.3];
        let f = PointTargetField(target.clone());
        let x0 = noise(5, 2, 3);
        for out in [
            sample_onestep(&f, &x0, None).unwrap(),
            sample_segments(&f, &x0, None, 2).unwrap(),
            sample_euler(&f, &x0, None, 10).unwrap(),
        ] {
            for r in 0..5 {
                for (a, b) in out.x.row(r).iter().zip(&target) {
                    assert!((a - b).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn single_segment_and_single_step_equal_onestep() {
        let f = PointTargetField(vec![1.0, 2.0]);
        let x0 = noise(3, 2, 4);
        let one = sample_onestep(&f, &x0, None).unwrap();
        assert_eq!(sample_segments(&f, &x0, None, 1).unwrap(), one);
        assert_eq!(sample_euler(&f, &x0, None, 1).unwrap(), one);
    }

    #[test]
    fn nfe_accounting_is_exact() {
        let f = CountingField::new(ConstantField(vec![1.0]));
        let x0 = noise(8, 1, 5);
        for (sampler, expect) in [(Sampler::OneStep, 1), (Sampler::Segments, 2), (Sampler::Euler(10), 10)] {
            f.reset();
            let out = sampler.run(&f, &x0, None, 2).unwrap();
            assert_eq!(f.calls(), expect);
            assert_eq!(out.nfe, expect);
            assert_eq!(sampler.nfe(2), expect);
        }
    }

    #[test]
    fn sampler_names_round_trip() {
        for s in ["onestep", "segments", "euler-10", "euler-1"] {
            assert_eq!(s.parse::<Sampler>().unwrap().to_string(), s);
        }
        for bad in ["euler-0", "euler-", "heun-3", ""] {
            assert!(bad.parse::<Sampler>().is_err());
        }
    }
}
