use super::mlp::{ParamGrads, Parameters};
use crate::error::{Error, Result};

/// Max relative error between analytic gradients and central differences.
///
/// `loss_fn` returns the loss and its analytic gradient for the current
/// parameters; it is called once for the analytic side and twice per scalar
/// parameter for the numeric side. Relative error per element is
/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn grad_check<P, F>(model: &mut P, mut loss_fn: F, h: f64) -> Result<f64>
where
    P: Parameters + ?Sized,
    F: FnMut(&P) -> Result<(f64, ParamGrads)>,
{
    if !(h > 0.0) {
        return Err(Error::Range(format!("step h must be positive, got {h}")));
    }
    let (loss, analytic) = loss_fn(model)?;
    if !loss.is_finite() {
        return Err(Error::Numeric("loss is not finite".into()));
    }
    let shapes: Vec<Vec<usize>> = model.parameters().iter().map(|t| t.shape().to_vec()).collect();
    if analytic.0.len() != shapes.len()
        || analytic.0.iter().zip(&shapes).any(|(g, s)| g.shape() != s.as_slice())
    {
        return Err(Error::Dimension("analytic gradients do not match parameters".into()));
    }

    let mut worst: f64 = 0.0;
    for (pi, shape) in shapes.iter().enumerate() {
        let n: usize = shape.iter().product();
        for e in 0..n {
            let orig = model.parameters()[pi].data()[e];
            model.parameters_mut()[pi].data_mut()[e] = orig + h;
            let plus = loss_fn(model)?.0;
            model.parameters_mut()[pi].data_mut()[e] = orig - h;
            let minus = loss_fn(model)?.0;
            model.parameters_mut()[pi].data_mut()[e] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::Numeric("loss is not finite under perturbation".into()));
            }
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.0[pi].data()[e];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::mlp::{Activation, Dense, MlpModel};
    use crate::numcore::rng::Rng;
    use crate::numcore::tensor::Tensor;

    fn mse_loss(m: &MlpModel, x: &Tensor, y: &Tensor) -> Result<(f64, ParamGrads)> {
        let (out, cache) = m.forward(x)?;
        let diff = out.sub(y)?;
        let n = x.rows() as f64;
        let loss = diff.data().iter().map(|d| d * d).sum::<f64>() / n;
        let (g, _) = m.backward(&cache, &diff.scale(2.0 / n))?;
        Ok((loss, g))
    }

    #[test]
    fn quadratic_loss_linear_model() {
        let mut rng = Rng::new(21);
        let mut m = MlpModel::from_layers(vec![Dense::xavier(3, 2, Activation::Identity, &mut rng).unwrap()]).unwrap();
        let x = Tensor::from_rows(&(0..4).map(|_| rng.gaussian_vec(3)).collect::<Vec<_>>()).unwrap();
        let y = Tensor::from_rows(&(0..4).map(|_| rng.gaussian_vec(2)).collect::<Vec<_>>()).unwrap();
        let err = grad_check(&mut m, |m| mse_loss(m, &x, &y), 1e-5).unwrap();
        assert!(err <= 1e-6, "max rel error {err}");
    }

    #[test]
    fn two_hidden_tanh_mlp_batch16() {
        let mut rng = Rng::new(22);
        let mut m = MlpModel::new(&[4, 12, 12, 3], Activation::Tanh, Activation::Identity, &mut rng).unwrap();
        let x = Tensor::from_rows(&(0..16).map(|_| rng.gaussian_vec(4)).collect::<Vec<_>>()).unwrap();
        let y = Tensor::from_rows(&(0..16).map(|_| rng.gaussian_vec(3)).collect::<Vec<_>>()).unwrap();
        let err = grad_check(&mut m, |m| mse_loss(m, &x, &y), 1e-5).unwrap();
        assert!(err <= 1e-4, "max rel error {err}");
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let mut rng = Rng::new(23);
        let mut m = MlpModel::new(&[3, 6, 2], Activation::Tanh, Activation::Identity, &mut rng).unwrap();
        let x = Tensor::from_rows(&(0..8).map(|_| rng.gaussian_vec(3)).collect::<Vec<_>>()).unwrap();
        let y = Tensor::from_rows(&(0..8).map(|_| rng.gaussian_vec(2)).collect::<Vec<_>>()).unwrap();
        let err = grad_check(
            &mut m,
            |m| {
                let (l, mut g) = mse_loss(m, &x, &y)?;
                g.0[0].data_mut()[0] += 0.1;
                Ok((l, g))
            },
            1e-5,
        )
        .unwrap();
        assert!(err >= 1e-2, "fault not detected: {err}");
    }

    #[test]
    fn rejects_bad_step_and_nan_loss() {
        let mut rng = Rng::new(24);
        let mut m = MlpModel::new(&[2, 2], Activation::Tanh, Activation::Identity, &mut rng).unwrap();
        let zero = ParamGrads::zeros_like(&m);
        assert!(matches!(grad_check(&mut m, |_| Ok((0.0, zero.clone())), 0.0), Err(Error::Range(_))));
        assert!(matches!(
            grad_check(&mut m, |_| Ok((f64::NAN, zero.clone())), 1e-5),
            Err(Error::Numeric(_))
        ));
    }
}
