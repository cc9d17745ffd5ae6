//! Shared per-point MLP, coordinatewise max-pool, linear projection.

use crate::error::{Error, Result};
use crate::numcore::{Activation, ActivationCache, MlpModel, ParamGrads, Parameters, Rng, Tensor};

use super::fps::PointCloud;

/// Width of the visual embedding.
pub const VISUAL_DIM: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct CloudEncoder {
    point_mlp: MlpModel,
    head: MlpModel,
}

#[derive(Debug, Clone)]
pub struct EncoderCache {
    point: ActivationCache,
    head: ActivationCache,
    /// Row index (into the stacked point features) of each pooled maximum,
    /// `clouds x features`.
    argmax: Vec<usize>,
    features: usize,
}

impl CloudEncoder {
    /// `3 -> 64 -> 128` tanh point MLP, max-pool, `128 -> 64` linear head.
    pub fn new(rng: &mut Rng) -> Result<Self> {
        Self::with_dims(&[3, 64, 128], VISUAL_DIM, rng)
    }

    /// Custom point-MLP widths (first entry must be 3) and output width.
    pub fn with_dims(point_dims: &[usize], out_dim: usize, rng: &mut Rng) -> Result<Self> {
        if point_dims.first() != Some(&3) {
            return Err(Error::Dimension("point MLP must take 3 coordinates".into()));
        }
        let point_mlp = MlpModel::new(point_dims, Activation::Tanh, Activation::Tanh, rng)?;
        let pooled = point_mlp.output_dim();
        let head = MlpModel::new(&[pooled, out_dim], Activation::Identity, Activation::Identity, rng)?;
        Ok(Self { point_mlp, head })
    }

    pub fn from_parts(point_mlp: MlpModel, head: MlpModel) -> Result<Self> {
        if point_mlp.input_dim() != 3 || head.input_dim() != point_mlp.output_dim() {
            return Err(Error::Dimension("encoder parts do not chain".into()));
        }
        Ok(Self { point_mlp, head })
    }

    pub fn point_mlp(&self) -> &MlpModel {
        &self.point_mlp
    }

    pub fn head(&self) -> &MlpModel {
        &self.head
    }

    pub fn output_dim(&self) -> usize {
        self.head.output_dim()
    }

    fn stack(clouds: &[&PointCloud]) -> Result<(Tensor, Vec<usize>)> {
        if clouds.is_empty() {
            return Err(Error::Range("no clouds to encode".into()));
        }
        let mut offsets = Vec::with_capacity(clouds.len() + 1);
        let mut data = Vec::new();
        offsets.push(0);
        for c in clouds {
            if c.is_empty() {
                return Err(Error::Range("empty point cloud".into()));
            }
            data.extend(c.points().iter().flatten().copied());
            offsets.push(offsets.last().unwrap() + c.len());
        }
        let n = *offsets.last().unwrap();
        Ok((Tensor::new(vec![n, 3], data)?, offsets))
    }

    fn pool(features: &Tensor, offsets: &[usize]) -> (Tensor, Vec<usize>) {
        let width = features.last_dim();
        let clouds = offsets.len() - 1;
        let mut pooled = Tensor::zeros(&[clouds, width]);
        let mut argmax = vec![0usize; clouds * width];
        for c in 0..clouds {
            let out = pooled.row_mut(c);
            let arg = &mut argmax[c * width..(c + 1) * width];
            out.copy_from_slice(features.row(offsets[c]));
            arg.fill(offsets[c]);
            for r in offsets[c] + 1..offsets[c + 1] {
                for (k, &v) in features.row(r).iter().enumerate() {
                    if v > out[k] {
                        out[k] = v;
                        arg[k] = r;
                    }
                }
            }
        }
        (pooled, argmax)
    }

    /// Embeds each cloud; returns `(clouds, output_dim)`.
    pub fn encode(&self, clouds: &[&PointCloud]) -> Result<Tensor> {
        let (points, offsets) = Self::stack(clouds)?;
        let features = self.point_mlp.predict(&points)?;
        let (pooled, _) = Self::pool(&features, &offsets);
        self.head.predict(&pooled)
    }

    pub fn forward(&self, clouds: &[&PointCloud]) -> Result<(Tensor, EncoderCache)> {
        let (points, offsets) = Self::stack(clouds)?;
        let (features, point) = self.point_mlp.forward(&points)?;
        let (pooled, argmax) = Self::pool(&features, &offsets);
        let (out, head) = self.head.forward(&pooled)?;
        let cache = EncoderCache {
            point,
            head,
            argmax,
            features: features.last_dim(),
        };
        Ok((out, cache))
    }

    /// Parameter gradients (point MLP first, then head) for
    /// `output_grad = dL/d(embedding)`. Gradient reaches only the point that
    /// attained each pooled maximum.
    pub fn backward(&self, cache: &EncoderCache, output_grad: &Tensor) -> Result<ParamGrads> {
        let (head_grads, pooled_grad) = self.head.backward(&cache.head, output_grad)?;
        let rows = cache.point.output().rows();
        let width = cache.features;
        let mut feature_grad = Tensor::zeros(&[rows, width]);
        for c in 0..pooled_grad.rows() {
            for (k, &g) in pooled_grad.row(c).iter().enumerate() {
                let r = cache.argmax[c * width + k];
                feature_grad.row_mut(r)[k] += g;
            }
        }
        let (point_grads, _) = self.point_mlp.backward(&cache.point, &feature_grad)?;
        Ok(point_grads.concat(head_grads))
    }
}

impl Parameters for CloudEncoder {
    fn parameters(&self) -> Vec<&Tensor> {
        let mut p = self.point_mlp.parameters();
        p.extend(self.head.parameters());
        p
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.point_mlp.parameters_mut();
        p.extend(self.head.parameters_mut());
        p
    }
}

/// Embedding of a single (already downsampled) cloud.
pub fn encode_cloud(encoder: &CloudEncoder, cloud: &PointCloud) -> Result<Vec<f64>> {
    Ok(encoder.encode(&[cloud])?.into_data())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{grad_check, Dense};

    fn random_cloud(n: usize, rng: &mut Rng) -> PointCloud {
        PointCloud::new((0..n).map(|_| [rng.gaussian(), rng.gaussian(), rng.gaussian()]).collect()).unwrap()
    }

    #[test]
    fn permutation_and_duplication_invariance() {
        let mut rng = Rng::new(1);
        let enc = CloudEncoder::new(&mut rng).unwrap();
        let cloud = random_cloud(20, &mut rng);
        let base = encode_cloud(&enc, &cloud).unwrap();
        assert_eq!(base.len(), VISUAL_DIM);

        let mut idx: Vec<usize> = (0..20).collect();
        rng.shuffle(&mut idx);
        assert_eq!(encode_cloud(&enc, &cloud.select(&idx)).unwrap(), base);

        let doubled: Vec<usize> = (0..20).chain(0..20).collect();
        assert_eq!(encode_cloud(&enc, &cloud.select(&doubled)).unwrap(), base);
    }

    #[test]
    fn single_point_pools_to_itself() {
        // Identity-like stub: point MLP 3 -> 3 identity weights (tanh), head identity.
        let mut eye = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            eye.data_mut()[i * 3 + i] = 1.0;
        }
        let point = MlpModel::from_layers(vec![Dense::new(eye.clone(), Tensor::zeros(&[3]), Activation::Tanh).unwrap()])
            .unwrap();
        let head =
            MlpModel::from_layers(vec![Dense::new(eye, Tensor::zeros(&[3]), Activation::Identity).unwrap()]).unwrap();
        let enc = CloudEncoder::from_parts(point, head).unwrap();
        let p = [0.2, -0.4, 0.1];
        let out = encode_cloud(&enc, &PointCloud::new(vec![p]).unwrap()).unwrap();
        for (o, v) in out.iter().zip(p) {
            assert_eq!(*o, v.tanh());
        }
    }

    #[test]
    fn batch_encoding_matches_single() {
        let mut rng = Rng::new(2);
        let enc = CloudEncoder::new(&mut rng).unwrap();
        let a = random_cloud(7, &mut rng);
        let b = random_cloud(11, &mut rng);
        let both = enc.encode(&[&a, &b]).unwrap();
        assert_eq!(both.row(0), encode_cloud(&enc, &a).unwrap().as_slice());
        assert_eq!(both.row(1), encode_cloud(&enc, &b).unwrap().as_slice());
    }

    #[test]
    fn encoder_gradients_match_finite_differences() {
        let mut rng = Rng::new(3);
        let mut enc = CloudEncoder::with_dims(&[3, 6, 8], 4, &mut rng).unwrap();
        let clouds: Vec<PointCloud> = (0..3).map(|_| random_cloud(9, &mut rng)).collect();
        let refs: Vec<&PointCloud> = clouds.iter().collect();
        let target = Tensor::new(vec![3, 4], rng.gaussian_vec(12)).unwrap();
        let err = grad_check(
            &mut enc,
            |e| {
                let (out, cache) = e.forward(&refs)?;
                let diff = out.sub(&target)?;
                let loss = diff.data().iter().map(|d| d * d).sum::<f64>();
                Ok((loss, e.backward(&cache, &diff.scale(2.0))?))
            },
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-4, "{err}");
    }

    #[test]
    fn empty_input_is_range_error() {
        let mut rng = Rng::new(4);
        let enc = CloudEncoder::new(&mut rng).unwrap();
        assert!(matches!(enc.encode(&[]), Err(Error::Range(_))));
    }
}
