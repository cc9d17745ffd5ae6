use crate::error::{Error, Result};
use crate::numcore::Parameters;

/// Exponential moving average of a parameter set, used as the target
/// network of the consistency objective.
#[derive(Debug, Clone)]
pub struct EmaParams<P> {
    shadow: P,
    decay: f64,
}

impl<P: Parameters + Clone> EmaParams<P> {
    pub fn new(source: &P, decay: f64) -> Result<Self> {
        if !(decay > 0.0 && decay < 1.0) {
            return Err(Error::Range(format!("EMA decay {decay} outside (0, 1)")));
        }
        Ok(Self {
            shadow: source.clone(),
            decay,
        })
    }

    /// Restores a previously saved shadow.
    pub fn from_shadow(shadow: P, decay: f64) -> Result<Self> {
        if !(decay > 0.0 && decay < 1.0) {
            return Err(Error::Range(format!("EMA decay {decay} outside (0, 1)")));
        }
        Ok(Self { shadow, decay })
    }

    pub fn shadow(&self) -> &P {
        &self.shadow
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }

    /// `shadow <- decay * shadow + (1 - decay) * current`.
    pub fn update(&mut self, current: &P) -> Result<()> {
        let src = current.parameters();
        let dst = self.shadow.parameters_mut();
        if src.len() != dst.len() || src.iter().zip(&dst).any(|(a, b)| a.shape() != b.shape()) {
            return Err(Error::Dimension("EMA shadow does not mirror the source parameters".into()));
        }
        let d = self.decay;
        for (s, c) in dst.into_iter().zip(src) {
            for (s, &c) in s.data_mut().iter_mut().zip(c.data()) {
                *s = d * *s + (1.0 - d) * c;
            }
        }
        Ok(())
    }
}

pub fn ema_update<P: Parameters + Clone>(ema: &mut EmaParams<P>, current: &P) -> Result<()> {
    ema.update(current)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Tensor;

    #[derive(Clone)]
    struct Flat(Tensor);

    impl Parameters for Flat {
        fn parameters(&self) -> Vec<&Tensor> {
            vec![&self.0]
        }
        fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
            vec![&mut self.0]
        }
    }

    #[test]
    fn single_update() {
        let mut ema = EmaParams::new(&Flat(Tensor::zeros(&[3])), 0.95).unwrap();
        ema_update(&mut ema, &Flat(Tensor::filled(&[3], 1.0))).unwrap();
        for &v in ema.shadow().0.data() {
            assert!((v - 0.05).abs() < 1e-15);
        }
    }

    #[test]
    fn fixed_point() {
        let p = Flat(Tensor::new(vec![2], vec![0.3, -7.0]).unwrap());
        let mut ema = EmaParams::new(&p, 0.95).unwrap();
        ema.update(&p).unwrap();
        assert_eq!(ema.shadow().0, p.0);
    }

    #[test]
    fn geometric_series() {
        let mut ema = EmaParams::new(&Flat(Tensor::zeros(&[1])), 0.95).unwrap();
        let one = Flat(Tensor::filled(&[1], 1.0));
        for n in 1..=200 {
            ema.update(&one).unwrap();
            let expect = 1.0 - 0.95f64.powi(n);
            assert!((ema.shadow().0.data()[0] - expect).abs() < 1e-13, "n = {n}");
        }
    }

    #[test]
    fn rejects_bad_decay_and_shapes() {
        let p = Flat(Tensor::zeros(&[2]));
        assert!(EmaParams::new(&p, 1.0).is_err());
        assert!(EmaParams::new(&p, 0.0).is_err());
        let mut ema = EmaParams::new(&p, 0.5).unwrap();
        assert!(ema.update(&Flat(Tensor::zeros(&[3]))).is_err());
    }
}
