use serde::{Deserialize, Serialize};

use super::mlp::{ParamGrads, Parameters};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-6,
        }
    }
}

/// AdamW moments for one parameter list.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: AdamWConfig,
    pub step_count: u64,
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
}

impl OptimizerState {
    pub fn new<P: Parameters + ?Sized>(params: &P, config: AdamWConfig) -> Self {
        let zeros: Vec<Tensor> = params.parameters().iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            config,
            step_count: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
        }
    }
}

/// One decoupled-weight-decay Adam update. Gradients are checked for
/// finiteness before any parameter is touched.
pub fn adamw_step<P: Parameters + ?Sized>(params: &mut P, grads: &ParamGrads, state: &mut OptimizerState) -> Result<()> {
    if !grads.is_finite() {
        return Err(Error::Numeric("non-finite gradient, step aborted".into()));
    }
    let tensors = params.parameters_mut();
    if tensors.len() != grads.0.len() || tensors.len() != state.first_moment.len() {
        return Err(Error::Dimension(format!(
            "{} parameters, {} gradients, {} moments",
            tensors.len(),
            grads.0.len(),
            state.first_moment.len()
        )));
    }
    for ((p, g), m) in tensors.iter().zip(&grads.0).zip(&state.first_moment) {
        if p.shape() != g.shape() || p.shape() != m.shape() {
            return Err(Error::Dimension(format!(
                "parameter {:?} vs gradient {:?}",
                p.shape(),
                g.shape()
            )));
        }
    }

    let c = state.config;
    state.step_count += 1;
    let t = state.step_count as i32;
    let bc1 = 1.0 - c.beta1.powi(t);
    let bc2 = 1.0 - c.beta2.powi(t);
    let decay = 1.0 - c.learning_rate * c.weight_decay;

    for (((p, g), m), v) in tensors
        .into_iter()
        .zip(&grads.0)
        .zip(state.first_moment.iter_mut())
        .zip(state.second_moment.iter_mut())
    {
        for (((p, &g), m), v) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut().iter_mut())
            .zip(v.data_mut().iter_mut())
        {
            *m = c.beta1 * *m + (1.0 - c.beta1) * g;
            *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p = *p * decay - c.learning_rate * m_hat / (v_hat.sqrt() + c.eps);
        }
    }
    Ok(())
}
