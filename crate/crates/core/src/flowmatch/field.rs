//! Velocity fields `v(t, x, cond)`.

use std::cell::Cell;

use crate::error::{Error, Result};
use crate::numcore::{Activation, ActivationCache, MlpModel, ParamGrads, Parameters, Rng, Tensor};

/// A time-dependent vector field over batches of samples.
///
/// `t` holds one time per row of `x`; `cond` is either absent or has the
/// same number of rows as `x`.
pub trait VelocityField {
    fn velocity(&self, t: &[f64], x: &Tensor, cond: Option<&Tensor>) -> Result<Tensor>;
}

impl<F: VelocityField + ?Sized> VelocityField for &F {
    fn velocity(&self, t: &[f64], x: &Tensor, cond: Option<&Tensor>) -> Result<Tensor> {
        (**self).velocity(t, x, cond)
    }
}

/// Counts batched field evaluations.
pub struct CountingField<F> {
    inner: F,
    calls: Cell<usize>,
}

impl<F> CountingField<F> {
    pub fn new(inner: F) -> Self {
        Self {
            inner,
            calls: Cell::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.get()
    }

    pub fn reset(&self) {
        self.calls.set(0);
    }

    pub fn into_inner(self) -> F {
        self.inner
    }
}

impl<F: VelocityField> VelocityField for CountingField<F> {
    fn velocity(&self, t: &[f64], x: &Tensor, cond: Option<&Tensor>) -> Result<Tensor> {
        self.calls.set(self.calls.get() + 1);
        self.inner.velocity(t, x, cond)
    }
}

/// `v(t, x) = c` everywhere.
#[derive(Debug, Clone)]
pub struct ConstantField(pub Vec<f64>);

impl VelocityField for ConstantField {
    fn velocity(&self, t: &[f64], x: &Tensor, _cond: Option<&Tensor>) -> Result<Tensor> {
        check_batch(t, x, None)?;
        if x.last_dim() != self.0.len() {
            return Err(Error::Dimension("constant field width".into()));
        }
        let rows = vec![self.0.clone(); x.rows()];
        Tensor::from_rows(&rows).map(|m| reshape_like(m, x))
    }
}

/// Exact conditional field transporting everything onto the single point
/// `target`: `v(t, x) = (target - x) / (1 - t)`.
#[derive(Debug, Clone)]
pub struct PointTargetField(pub Vec<f64>);

impl VelocityField for PointTargetField {
    fn velocity(&self, t: &[f64], x: &Tensor, _cond: Option<&Tensor>) -> Result<Tensor> {
        check_batch(t, x, None)?;
        let d = x.last_dim();
        if d != self.0.len() {
            return Err(Error::Dimension("point target width".into()));
        }
        let mut out = x.clone();
        for (r, &tr) in t.iter().enumerate() {
            if tr >= 1.0 {
                return Err(Error::Range("point-target field undefined at t = 1".into()));
            }
            for (o, &target) in out.row_mut(r).iter_mut().zip(&self.0) {
                *o = (target - *o) / (1.0 - tr);
            }
        }
        Ok(out)
    }
}

/// Wraps a closure evaluated row by row.
pub struct FnField<F>(pub F);

impl<F> VelocityField for FnField<F>
where
    F: Fn(f64, &[f64], Option<&[f64]>) -> Vec<f64>,
{
    fn velocity(&self, t: &[f64], x: &Tensor, cond: Option<&Tensor>) -> Result<Tensor> {
        check_batch(t, x, cond)?;
        let rows: Vec<Vec<f64>> = (0..x.rows())
            .map(|r| (self.0)(t[r], x.row(r), cond.map(|c| c.row(r))))
            .collect();
        let out = Tensor::from_rows(&rows)?;
        if out.shape() != x.shape() {
            return Err(Error::Dimension("closure field output width".into()));
        }
        Ok(out)
    }
}

fn reshape_like(m: Tensor, x: &Tensor) -> Tensor {
    Tensor::new(x.shape().to_vec(), m.into_data()).expect("same element count")
}

pub(crate) fn check_batch(t: &[f64], x: &Tensor, cond: Option<&Tensor>) -> Result<()> {
    if x.shape().len() != 2 {
        return Err(Error::Dimension(format!("samples must be (batch, dim), got {:?}", x.shape())));
    }
    if t.len() != x.rows() {
        return Err(Error::Dimension(format!("{} times for {} samples", t.len(), x.rows())));
    }
    if let Some(c) = cond {
        if c.rows() != x.rows() {
            return Err(Error::Dimension(format!(
                "{} condition rows for {} samples",
                c.rows(),
                x.rows()
            )));
        }
    }
    Ok(())
}

/// Fixed sinusoidal embedding `[sin(2^k pi t), cos(2^k pi t)]` for
/// `k = 0..frequencies`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeEmbedding {
    pub frequencies: usize,
}

impl TimeEmbedding {
    pub fn width(&self) -> usize {
        2 * self.frequencies
    }

    pub fn embed(&self, t: f64, out: &mut Vec<f64>) {
        for k in 0..self.frequencies {
            let w = std::f64::consts::PI * (1u64 << k) as f64;
            out.push((w * t).sin());
            out.push((w * t).cos());
        }
    }
}

impl Default for TimeEmbedding {
    fn default() -> Self {
        Self { frequencies: 4 }
    }
}

/// An MLP velocity field with input layout `[x | embed(t) | cond]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpField {
    pub model: MlpModel,
    pub time: TimeEmbedding,
    pub sample_dim: usize,
    pub cond_dim: usize,
}

/// Tape of one [`MlpField::forward`] call.
#[derive(Debug, Clone)]
pub struct FieldCache {
    mlp: ActivationCache,
}

impl MlpField {
    pub fn new(sample_dim: usize, cond_dim: usize, hidden: &[usize], rng: &mut Rng) -> Result<Self> {
        let time = TimeEmbedding::default();
        let mut dims = vec![sample_dim + time.width() + cond_dim];
        dims.extend_from_slice(hidden);
        dims.push(sample_dim);
        let model = MlpModel::new(&dims, Activation::Tanh, Activation::Identity, rng)?;
        Ok(Self {
            model,
            time,
            sample_dim,
            cond_dim,
        })
    }

    /// Adopts an existing model whose dimensions match the layout.
    pub fn from_model(model: MlpModel, sample_dim: usize, cond_dim: usize) -> Result<Self> {
        let time = TimeEmbedding::default();
        if model.input_dim() != sample_dim + time.width() + cond_dim || model.output_dim() != sample_dim {
            return Err(Error::Dimension(format!(
                "model {}->{} does not fit sample {sample_dim} / cond {cond_dim}",
                model.input_dim(),
                model.output_dim()
            )));
        }
        Ok(Self {
            model,
            time,
            sample_dim,
            cond_dim,
        })
    }

    fn assemble(&self, t: &[f64], x: &Tensor, cond: Option<&Tensor>) -> Result<Tensor> {
        check_batch(t, x, cond)?;
        if x.last_dim() != self.sample_dim {
            return Err(Error::Dimension(format!(
                "field expects samples of width {}, got {}",
                self.sample_dim,
                x.last_dim()
            )));
        }
        let cond_width = cond.map_or(0, |c| c.last_dim());
        if cond_width != self.cond_dim {
            return Err(Error::Dimension(format!(
                "field expects condition width {}, got {cond_width}",
                self.cond_dim
            )));
        }
        let width = self.model.input_dim();
        let mut data = Vec::with_capacity(x.rows() * width);
        for r in 0..x.rows() {
            data.extend_from_slice(x.row(r));
            self.time.embed(t[r], &mut data);
            if let Some(c) = cond {
                data.extend_from_slice(c.row(r));
            }
        }
        Tensor::new(vec![x.rows(), width], data)
    }

    pub fn forward(&self, t: &[f64], x: &Tensor, cond: Option<&Tensor>) -> Result<(Tensor, FieldCache)> {
        let input = self.assemble(t, x, cond)?;
        let (out, mlp) = self.model.forward(&input)?;
        Ok((out, FieldCache { mlp }))
    }

    /// Parameter gradients plus the gradient with respect to the condition
    /// (when the field is conditional).
    pub fn backward(&self, cache: &FieldCache, output_grad: &Tensor) -> Result<(ParamGrads, Option<Tensor>)> {
        let (grads, input_grad) = self.model.backward(&cache.mlp, output_grad)?;
        let cond_grad = if self.cond_dim > 0 {
            let parts = input_grad.split_cols(&[self.sample_dim + self.time.width(), self.cond_dim])?;
            parts.into_iter().nth(1)
        } else {
            None
        };
        Ok((grads, cond_grad))
    }
}

impl VelocityField for MlpField {
    fn velocity(&self, t: &[f64], x: &Tensor, cond: Option<&Tensor>) -> Result<Tensor> {
        let input = self.assemble(t, x, cond)?;
        self.model.predict(&input)
    }
}

impl Parameters for MlpField {
    fn parameters(&self) -> Vec<&Tensor> {
        self.model.parameters()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.model.parameters_mut()
    }
}
