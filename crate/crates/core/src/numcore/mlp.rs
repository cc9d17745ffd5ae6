//! Dense feed-forward networks with hand-derived gradients.
//!
//! Each layer computes `y = act(x W^T + b)` on a `(batch, in)` input, with
//! `W` stored row-major as `(out, in)`. Gradients are exact reverse-mode
//! derivatives of that map; [`super::gradcheck`] verifies them numerically.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use super::rng::Rng;
use super::tensor::{gemm, MatView, Tensor};
use crate::error::{Error, Result};

static NEXT_MODEL_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_MODEL_ID.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, z: &mut [f64]) {
        if let Activation::Tanh = self {
            for v in z {
                *v = v.tanh();
            }
        }
    }

    /// Turns `dy` into `dz` in place given the post-activation output `y`.
    fn backprop(self, y: &[f64], dy: &mut [f64]) {
        if let Activation::Tanh = self {
            for (d, &y) in dy.iter_mut().zip(y) {
                *d *= 1.0 - y * y;
            }
        }
    }

    pub(crate) fn tag(self) -> u8 {
        match self {
            Activation::Tanh => 0,
            Activation::Identity => 1,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Activation::Tanh),
            1 => Ok(Activation::Identity),
            t => Err(Error::Format(format!("unknown activation tag {t}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    weight: Tensor,
    bias: Tensor,
    activation: Activation,
}

impl Dense {
    pub fn new(weight: Tensor, bias: Tensor, activation: Activation) -> Result<Self> {
        if weight.shape().len() != 2 {
            return Err(Error::Dimension(format!(
                "weight must be 2-D, got {:?}",
                weight.shape()
            )));
        }
        let out = weight.shape()[0];
        if bias.shape() != [out] {
            return Err(Error::Dimension(format!(
                "bias {:?} does not match {out} outputs",
                bias.shape()
            )));
        }
        if weight.shape()[1] == 0 || out == 0 {
            return Err(Error::Dimension("layer dims must be positive".into()));
        }
        Ok(Self {
            weight,
            bias,
            activation,
        })
    }

    /// Xavier-uniform weights, zero bias.
    pub fn xavier(input: usize, output: usize, activation: Activation, rng: &mut Rng) -> Result<Self> {
        let limit = (6.0 / (input + output) as f64).sqrt();
        let w = (0..input * output).map(|_| rng.uniform_in(-limit, limit)).collect();
        Self::new(
            Tensor::new(vec![output, input], w)?,
            Tensor::zeros(&[output]),
            activation,
        )
    }

    pub fn input_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    fn forward(&self, x: &Tensor) -> Tensor {
        let (batch, input, output) = (x.rows(), self.input_dim(), self.output_dim());
        let mut y = Vec::with_capacity(batch * output);
        for _ in 0..batch {
            y.extend_from_slice(self.bias.data());
        }
        gemm(
            batch,
            input,
            output,
            MatView::row_major(x.data(), input),
            MatView::transposed(self.weight.data(), input),
            &mut y,
            true,
        );
        self.activation.apply(&mut y);
        Tensor::new(vec![batch, output], y).expect("dense output shape")
    }
}

/// Tape of per-layer inputs and outputs from one forward pass.
#[derive(Debug, Clone)]
pub struct ActivationCache {
    model_id: u64,
    version: u64,
    inputs: Vec<Tensor>,
    outputs: Vec<Tensor>,
}

impl ActivationCache {
    pub fn output(&self) -> &Tensor {
        self.outputs.last().expect("cache has at least one layer")
    }
}

/// Gradients for a flat, ordered list of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads(pub Vec<Tensor>);

impl ParamGrads {
    pub fn zeros_like<P: Parameters + ?Sized>(model: &P) -> Self {
        ParamGrads(model.parameters().iter().map(|p| Tensor::zeros(p.shape())).collect())
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.0
    }

    /// `self += other`, tensor by tensor.
    pub fn accumulate(&mut self, other: &ParamGrads) -> Result<()> {
        if self.0.len() != other.0.len() {
            return Err(Error::Dimension("gradient list lengths differ".into()));
        }
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            a.axpy(1.0, b)?;
        }
        Ok(())
    }

    pub fn concat(mut self, other: ParamGrads) -> ParamGrads {
        self.0.extend(other.0);
        self
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(Tensor::is_finite)
    }

    pub fn max_abs(&self) -> f64 {
        self.0
            .iter()
            .flat_map(|t| t.data().iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Anything with an ordered list of trainable tensors.
pub trait Parameters {
    fn parameters(&self) -> Vec<&Tensor>;
    fn parameters_mut(&mut self) -> Vec<&mut Tensor>;

    fn num_parameters(&self) -> usize {
        self.parameters().iter().map(|t| t.len()).sum()
    }

    /// All parameter values, flattened in order.
    fn flat_parameters(&self) -> Vec<f64> {
        self.parameters()
            .iter()
            .flat_map(|t| t.data().iter().copied())
            .collect()
    }
}

#[derive(Debug)]
pub struct MlpModel {
    layers: Vec<Dense>,
    id: u64,
    version: u64,
}

impl Clone for MlpModel {
    fn clone(&self) -> Self {
        Self {
            layers: self.layers.clone(),
            id: fresh_id(),
            version: 0,
        }
    }
}

impl PartialEq for MlpModel {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

impl MlpModel {
    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Dimension("model needs at least one layer".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::Dimension(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    pair[0].output_dim(),
                    i + 1,
                    pair[1].input_dim()
                )));
            }
        }
        Ok(Self {
            layers,
            id: fresh_id(),
            version: 0,
        })
    }

    /// Xavier-initialised chain `dims[0] -> dims[1] -> ... -> dims[n]`,
    /// `hidden` activation on every layer except the last.
    pub fn new(dims: &[usize], hidden: Activation, output: Activation, rng: &mut Rng) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Dimension(format!("need at least two dims, got {dims:?}")));
        }
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, d)| Dense::xavier(d[0], d[1], if i == last { output } else { hidden }, rng))
            .collect::<Result<Vec<_>>>()?;
        Self::from_layers(layers)
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(Dense::output_dim).unwrap_or(0)
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        if input.last_dim() != self.input_dim() || input.shape().len() != 2 {
            return Err(Error::Dimension(format!(
                "model expects (batch, {}), got {:?}",
                self.input_dim(),
                input.shape()
            )));
        }
        Ok(())
    }

    /// Forward pass without recording a cache.
    pub fn predict(&self, input: &Tensor) -> Result<Tensor> {
        self.check_input(input)?;
        let mut x = self.layers[0].forward(input);
        for layer in &self.layers[1..] {
            x = layer.forward(&x);
        }
        Ok(x)
    }

    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, ActivationCache)> {
        self.check_input(input)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut x = input.clone();
        for layer in &self.layers {
            let y = layer.forward(&x);
            inputs.push(x);
            outputs.push(y.clone());
            x = y;
        }
        let cache = ActivationCache {
            model_id: self.id,
            version: self.version,
            inputs,
            outputs,
        };
        Ok((x, cache))
    }

    /// Gradients of a scalar loss with respect to every parameter and to the
    /// input, given `output_grad = dL/d(output)`.
    pub fn backward(&self, cache: &ActivationCache, output_grad: &Tensor) -> Result<(ParamGrads, Tensor)> {
        if cache.model_id != self.id || cache.version != self.version {
            return Err(Error::Contract(
                "activation cache does not belong to the current model parameters".into(),
            ));
        }
        if output_grad.shape() != cache.output().shape() {
            return Err(Error::Dimension(format!(
                "output grad {:?} vs output {:?}",
                output_grad.shape(),
                cache.output().shape()
            )));
        }
        let mut grads = Vec::with_capacity(2 * self.layers.len());
        let mut delta = output_grad.clone();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let x = &cache.inputs[l];
            let y = &cache.outputs[l];
            let (batch, input, output) = (x.rows(), layer.input_dim(), layer.output_dim());
            layer.activation.backprop(y.data(), delta.data_mut());

            let mut dw = vec![0.0; output * input];
            gemm(
                output,
                batch,
                input,
                MatView::transposed(delta.data(), output),
                MatView::row_major(x.data(), input),
                &mut dw,
                false,
            );
            let mut db = vec![0.0; output];
            for r in 0..batch {
                for (b, d) in db.iter_mut().zip(delta.row(r)) {
                    *b += d;
                }
            }
            let mut dx = vec![0.0; batch * input];
            gemm(
                batch,
                output,
                input,
                MatView::row_major(delta.data(), output),
                MatView::row_major(layer.weight.data(), input),
                &mut dx,
                false,
            );
            grads.push(Tensor::new(vec![output], db)?);
            grads.push(Tensor::new(vec![output, input], dw)?);
            delta = Tensor::new(vec![batch, input], dx)?;
        }
        grads.reverse();
        Ok((ParamGrads(grads), delta))
    }
}

impl Parameters for MlpModel {
    fn parameters(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        // Any caller holding mutable parameters may change them.
        self.version += 1;
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }
}

pub fn mlp_forward(model: &MlpModel, input: &Tensor) -> Result<(Tensor, ActivationCache)> {
    model.forward(input)
}

pub fn mlp_backward(model: &MlpModel, cache: &ActivationCache, output_grad: &Tensor) -> Result<ParamGrads> {
    model.backward(cache, output_grad).map(|(g, _)| g)
}
