//! Flow matching objectives.
//!
//! Both objectives are split into a pure kernel that maps field outputs to a
//! loss and `dL/dv`, and thin wrappers that evaluate fields. The kernels are
//! shared by the generic value functions (any [`VelocityField`]) and the
//! trainable paths, which backpropagate `dL/dv` through an [`MlpField`] or,
//! in the policy, through the cloud encoder as well.

use super::field::{MlpField, VelocityField};
use super::path::{extrapolate, interpolate_rows};
use super::schedule::SegmentSchedule;
use crate::error::{Error, Result};
use crate::numcore::{ParamGrads, Rng, Tensor};

/// One source/target coupling with its training time.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingSample {
    pub x0: Vec<f64>,
    pub x1: Vec<f64>,
    pub t: f64,
    pub segment: usize,
    pub cond: Option<Vec<f64>>,
}

/// A batch of couplings stored row-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingBatch {
    pub x0: Tensor,
    pub x1: Tensor,
    pub t: Vec<f64>,
    pub segment: Vec<usize>,
    pub cond: Option<Tensor>,
}

impl CouplingBatch {
    pub fn from_samples(samples: &[CouplingSample]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Contract("empty batch".into()));
        }
        let x0 = Tensor::from_rows(&samples.iter().map(|s| s.x0.as_slice()).collect::<Vec<_>>())?;
        let x1 = Tensor::from_rows(&samples.iter().map(|s| s.x1.as_slice()).collect::<Vec<_>>())?;
        let cond = match samples.iter().filter(|s| s.cond.is_some()).count() {
            0 => None,
            n if n == samples.len() => Some(Tensor::from_rows(
                &samples.iter().map(|s| s.cond.as_deref().unwrap()).collect::<Vec<_>>(),
            )?),
            _ => return Err(Error::Contract("condition present on only some samples".into())),
        };
        Self::new(
            x0,
            x1,
            samples.iter().map(|s| s.t).collect(),
            samples.iter().map(|s| s.segment).collect(),
            cond,
        )
    }

    pub fn new(x0: Tensor, x1: Tensor, t: Vec<f64>, segment: Vec<usize>, cond: Option<Tensor>) -> Result<Self> {
        if x0.rows() == 0 {
            return Err(Error::Contract("empty batch".into()));
        }
        if x0.shape() != x1.shape() || x0.shape().len() != 2 {
            return Err(Error::Dimension(format!("x0 {:?} vs x1 {:?}", x0.shape(), x1.shape())));
        }
        if t.len() != x0.rows() || segment.len() != x0.rows() {
            return Err(Error::Dimension("one time and segment per sample".into()));
        }
        if let Some(c) = &cond {
            if c.rows() != x0.rows() {
                return Err(Error::Dimension("one condition row per sample".into()));
            }
        }
        Ok(Self {
            x0,
            x1,
            t,
            segment,
            cond,
        })
    }

    /// Gaussian sources and schedule-drawn times for the given targets.
    pub fn draw_consistency(x1: Tensor, cond: Option<Tensor>, sched: &SegmentSchedule, rng: &mut Rng) -> Result<Self> {
        let (rows, d) = (x1.rows(), x1.last_dim());
        let x0 = Tensor::new(vec![rows, d], rng.gaussian_vec(rows * d))?;
        let (segment, t) = (0..rows).map(|_| sched.draw(rng)).unzip();
        Self::new(x0, x1, t, segment, cond)
    }

    /// Gaussian sources and `t ~ U[epsilon, 1 - epsilon]`.
    pub fn draw_cfm(x1: Tensor, cond: Option<Tensor>, epsilon: f64, rng: &mut Rng) -> Result<Self> {
        let (rows, d) = (x1.rows(), x1.last_dim());
        let x0 = Tensor::new(vec![rows, d], rng.gaussian_vec(rows * d))?;
        let t = (0..rows).map(|_| rng.uniform_in(epsilon, 1.0 - epsilon)).collect();
        Self::new(x0, x1, t, vec![0; rows], cond)
    }

    pub fn len(&self) -> usize {
        self.x0.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Loss value, parameter gradients and (for conditional fields) the
/// gradient with respect to the condition rows.
#[derive(Debug, Clone)]
pub struct LossOutput {
    pub loss: f64,
    pub grads: ParamGrads,
    pub cond_grad: Option<Tensor>,
}

fn finite(loss: f64, grad: &Tensor) -> Result<()> {
    if !loss.is_finite() || !grad.is_finite() {
        return Err(Error::Numeric("loss or its gradient is not finite".into()));
    }
    Ok(())
}

/// Interpolated samples and regression targets `x1 - x0` for the CFM loss.
pub fn cfm_inputs(batch: &CouplingBatch) -> Result<(Tensor, Tensor)> {
    let x_t = interpolate_rows(&batch.x0, &batch.x1, &batch.t)?;
    let u = batch.x1.sub(&batch.x0)?;
    Ok((x_t, u))
}

/// `mean_b ||v_b - u_b||^2` and its gradient with respect to `v`.
pub fn cfm_objective(v: &Tensor, u: &Tensor) -> Result<(f64, Tensor)> {
    if v.shape() != u.shape() {
        return Err(Error::Dimension(format!("{:?} vs {:?}", v.shape(), u.shape())));
    }
    let n = v.rows() as f64;
    let diff = v.sub(u)?;
    let loss = diff.data().iter().map(|d| d * d).sum::<f64>() / n;
    let grad = diff.scale(2.0 / n);
    finite(loss, &grad)?;
    Ok((loss, grad))
}

pub fn cfm_loss_value<F: VelocityField + ?Sized>(field: &F, batch: &CouplingBatch) -> Result<f64> {
    let (x_t, u) = cfm_inputs(batch)?;
    let v = field.velocity(&batch.t, &x_t, batch.cond.as_ref())?;
    Ok(cfm_objective(&v, &u)?.0)
}

pub fn cfm_loss(field: &MlpField, batch: &CouplingBatch) -> Result<LossOutput> {
    let (x_t, u) = cfm_inputs(batch)?;
    let (v, cache) = field.forward(&batch.t, &x_t, batch.cond.as_ref())?;
    let (loss, dv) = cfm_objective(&v, &u)?;
    let (grads, cond_grad) = field.backward(&cache, &dv)?;
    Ok(LossOutput {
        loss,
        grads,
        cond_grad,
    })
}

/// Coupled evaluation points for the consistency loss.
#[derive(Debug, Clone)]
pub struct ConsistencyInputs {
    pub x_t: Tensor,
    pub t_next: Vec<f64>,
    pub x_next: Tensor,
}

/// Builds `x_t` and `x_{t+dt}` from the same `(x0, x1)` coupling, checking
/// that `t + dt` stays inside each sample's segment.
pub fn consistency_inputs(batch: &CouplingBatch, sched: &SegmentSchedule) -> Result<ConsistencyInputs> {
    sched.validate()?;
    let tol = 1e-12;
    let mut t_next = Vec::with_capacity(batch.len());
    for (&t, &i) in batch.t.iter().zip(&batch.segment) {
        if i >= sched.segments {
            return Err(Error::Contract(format!("segment {i} of {}", sched.segments)));
        }
        if t < sched.start(i) - tol || t + sched.delta_t > sched.end(i) + tol {
            return Err(Error::Contract(format!(
                "t = {t} with dt = {} leaves segment [{}, {}]",
                sched.delta_t,
                sched.start(i),
                sched.end(i)
            )));
        }
        t_next.push((t + sched.delta_t).min(1.0));
    }
    let x_t = interpolate_rows(&batch.x0, &batch.x1, &batch.t)?;
    let x_next = interpolate_rows(&batch.x0, &batch.x1, &t_next)?;
    Ok(ConsistencyInputs { x_t, t_next, x_next })
}

/// Segmented consistency objective
/// `mean_b [ lambda_i ||f(t, x_t) - f^-(t+dt, x_{t+dt})||^2 + alpha ||v - v^-||^2 ]`
/// with `f(t, x) = x + ((i+1)/K - t) v`. Returns the loss and `dL/dv` with
/// the target branch treated as constant.
pub fn consistency_objective(
    v: &Tensor,
    v_target: &Tensor,
    inputs: &ConsistencyInputs,
    batch: &CouplingBatch,
    sched: &SegmentSchedule,
) -> Result<(f64, Tensor)> {
    if v.shape() != v_target.shape() || v.shape() != inputs.x_t.shape() {
        return Err(Error::Dimension(format!(
            "velocity {:?}, target {:?}, samples {:?}",
            v.shape(),
            v_target.shape(),
            inputs.x_t.shape()
        )));
    }
    let n = batch.len() as f64;
    let span: Vec<f64> = batch
        .t
        .iter()
        .zip(&batch.segment)
        .map(|(&t, &i)| sched.end(i) - t)
        .collect();
    let span_next: Vec<f64> = inputs
        .t_next
        .iter()
        .zip(&batch.segment)
        .map(|(&t, &i)| sched.end(i) - t)
        .collect();
    let f = extrapolate(&inputs.x_t, v, &span);
    let f_target = extrapolate(&inputs.x_next, v_target, &span_next);

    let mut loss = 0.0;
    let mut grad = Tensor::zeros(v.shape());
    for r in 0..batch.len() {
        let lambda = sched.lambda[batch.segment[r]];
        let s = span[r];
        let g = grad.row_mut(r);
        for (k, g) in g.iter_mut().enumerate() {
            let df = f.row(r)[k] - f_target.row(r)[k];
            let dv = v.row(r)[k] - v_target.row(r)[k];
            loss += lambda * df * df + sched.alpha * dv * dv;
            *g = (2.0 * lambda * s * df + 2.0 * sched.alpha * dv) / n;
        }
    }
    loss /= n;
    finite(loss, &grad)?;
    Ok((loss, grad))
}

pub fn consistency_fm_loss_value<F, G>(field: &F, target: &G, sched: &SegmentSchedule, batch: &CouplingBatch) -> Result<f64>
where
    F: VelocityField + ?Sized,
    G: VelocityField + ?Sized,
{
    let inputs = consistency_inputs(batch, sched)?;
    let v = field.velocity(&batch.t, &inputs.x_t, batch.cond.as_ref())?;
    let v_target = target.velocity(&inputs.t_next, &inputs.x_next, batch.cond.as_ref())?;
    Ok(consistency_objective(&v, &v_target, &inputs, batch, sched)?.0)
}

/// Trainable consistency loss. `target` is the EMA network; it is evaluated
/// without recording gradients.
pub fn consistency_fm_loss<G: VelocityField + ?Sized>(
    field: &MlpField,
    target: &G,
    sched: &SegmentSchedule,
    batch: &CouplingBatch,
) -> Result<LossOutput> {
    let inputs = consistency_inputs(batch, sched)?;
    let (v, cache) = field.forward(&batch.t, &inputs.x_t, batch.cond.as_ref())?;
    let v_target = target.velocity(&inputs.t_next, &inputs.x_next, batch.cond.as_ref())?;
    let (loss, dv) = consistency_objective(&v, &v_target, &inputs, batch, sched)?;
    let (grads, cond_grad) = field.backward(&cache, &dv)?;
    Ok(LossOutput {
        loss,
        grads,
        cond_grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowmatch::field::{ConstantField, FnField, PointTargetField};

    fn single(x0: f64, x1: f64, t: f64) -> CouplingBatch {
        CouplingBatch::from_samples(&[CouplingSample {
            x0: vec![x0],
            x1: vec![x1],
            t,
            segment: 0,
            cond: None,
        }])
        .unwrap()
    }

    #[test]
    fn cfm_zero_when_field_matches_difference() {
        let batch = CouplingBatch::from_samples(&[
            CouplingSample {
                x0: vec![0.0, 1.0],
                x1: vec![3.0, 5.0],
                t: 0.3,
                segment: 0,
                cond: None,
            },
            CouplingSample {
                x0: vec![0.0, 1.0],
                x1: vec![3.0, 5.0],
                t: 0.8,
                segment: 0,
                cond: None,
            },
        ])
        .unwrap();
        assert_eq!(cfm_loss_value(&ConstantField(vec![3.0, 4.0]), &batch).unwrap(), 0.0);
    }

    #[test]
    fn cfm_zero_field_squared_norm() {
        let batch = CouplingBatch::from_samples(&[CouplingSample {
            x0: vec![0.0, 0.0],
            x1: vec![3.0, 4.0],
            t: 0.5,
            segment: 0,
            cond: None,
        }])
        .unwrap();
        assert_eq!(cfm_loss_value(&ConstantField(vec![0.0, 0.0]), &batch).unwrap(), 25.0);
    }

    #[test]
    fn consistency_stub_arithmetic() {
        // K = 1, t = 0, dt = 0.01: x_t = x0 = 0, x_{dt} = 0.01 * x1 = 1.
        // Live field 2, target field 0: f-terms differ by 1, v-terms by 2.
        let sched = SegmentSchedule::uniform(1);
        let batch = single(0.0, 100.0, 0.0);
        let loss = consistency_fm_loss_value(&ConstantField(vec![2.0]), &ConstantField(vec![0.0]), &sched, &batch)
            .unwrap();
        assert!((loss - 5.0).abs() < 1e-12, "{loss}");
    }

    #[test]
    fn consistency_identical_fields_tiny_dt() {
        let mut sched = SegmentSchedule::uniform(2);
        sched.delta_t = 1e-12;
        let field = FnField(|t: f64, x: &[f64], _c: Option<&[f64]>| x.iter().map(|v| (v * 3.0 + t).sin()).collect());
        let batch = single(0.4, -1.2, 0.3);
        let loss = consistency_fm_loss_value(&field, &field, &sched, &batch).unwrap();
        assert!(loss < 1e-20, "{loss}");
    }

    #[test]
    fn oracle_field_zero_loss() {
        let target = vec![0.5, -0.3];
        let field = PointTargetField(target.clone());
        let sched = SegmentSchedule::uniform(1);
        let mut rng = Rng::new(5);
        let x1 = Tensor::from_rows(&vec![target.clone(); 64]).unwrap();
        let batch = CouplingBatch::draw_consistency(x1, None, &sched, &mut rng).unwrap();
        let loss = consistency_fm_loss_value(&field, &field, &sched, &batch).unwrap();
        assert!(loss <= 1e-10, "{loss}");
    }

    #[test]
    fn segment_crossing_is_contract_error() {
        let sched = SegmentSchedule::uniform(2);
        let batch = single(0.0, 1.0, 0.495);
        let err = consistency_fm_loss_value(&ConstantField(vec![0.0]), &ConstantField(vec![0.0]), &sched, &batch);
        assert!(matches!(err, Err(Error::Contract(_))));
    }

    #[test]
    fn empty_batch_rejected() {
        assert!(matches!(CouplingBatch::from_samples(&[]), Err(Error::Contract(_))));
    }

    #[test]
    fn non_finite_loss_is_numeric_error() {
        let batch = single(0.0, 1.0, 0.5);
        assert!(matches!(
            cfm_loss_value(&ConstantField(vec![f64::INFINITY]), &batch),
            Err(Error::Numeric(_))
        ));
    }
}
