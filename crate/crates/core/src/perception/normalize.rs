use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-dimension affine map of the fitted `[min, max]` range onto `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    min: Vec<f64>,
    max: Vec<f64>,
}

impl Normalizer {
    pub fn from_bounds(min: Vec<f64>, max: Vec<f64>) -> Result<Self> {
        if min.len() != max.len() || min.is_empty() {
            return Err(Error::Dimension("min/max lengths differ or are empty".into()));
        }
        if min.iter().zip(&max).any(|(a, b)| !(a <= b) || !a.is_finite() || !b.is_finite()) {
            return Err(Error::Range("every max must be finite and >= its min".into()));
        }
        Ok(Self { min, max })
    }

    /// Fits bounds over a non-empty set of equal-length rows.
    pub fn fit<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| Error::Contract("cannot fit a normalizer on no data".into()))?
            .as_ref();
        let mut min = first.to_vec();
        let mut max = first.to_vec();
        for r in rows {
            let r = r.as_ref();
            if r.len() != min.len() {
                return Err(Error::Dimension("rows of unequal length".into()));
            }
            for ((lo, hi), &v) in min.iter_mut().zip(max.iter_mut()).zip(r) {
                *lo = lo.min(v);
                *hi = hi.max(v);
            }
        }
        Self::from_bounds(min, max)
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    pub fn min(&self) -> &[f64] {
        &self.min
    }

    pub fn max(&self) -> &[f64] {
        &self.max
    }

    /// `2 (x - min) / (max - min) - 1`; degenerate dimensions map to 0.
    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.dim());
        x.iter()
            .zip(self.min.iter().zip(&self.max))
            .map(|(&v, (&lo, &hi))| if hi > lo { 2.0 * (v - lo) / (hi - lo) - 1.0 } else { 0.0 })
            .collect()
    }

    /// Inverse of [`Self::normalize`]; degenerate dimensions return `min`.
    pub fn denormalize(&self, y: &[f64]) -> Vec<f64> {
        debug_assert_eq!(y.len(), self.dim());
        y.iter()
            .zip(self.min.iter().zip(&self.max))
            .map(|(&v, (&lo, &hi))| if hi > lo { (v + 1.0) * 0.5 * (hi - lo) + lo } else { lo })
            .collect()
    }

    /// Applies [`Self::normalize`] to consecutive `dim`-wide blocks of `x`.
    pub fn normalize_blocks(&self, x: &[f64]) -> Vec<f64> {
        x.chunks(self.dim()).flat_map(|c| self.normalize(c)).collect()
    }

    pub fn denormalize_blocks(&self, y: &[f64]) -> Vec<f64> {
        y.chunks(self.dim()).flat_map(|c| self.denormalize(c)).collect()
    }
}

pub fn normalize(norm: &Normalizer, x: &[f64]) -> Vec<f64> {
    norm.normalize(x)
}

pub fn denormalize(norm: &Normalizer, y: &[f64]) -> Vec<f64> {
    norm.denormalize(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn symmetric_range_and_endpoints() {
        let n = Normalizer::from_bounds(vec![-2.0], vec![2.0]).unwrap();
        assert_eq!(n.normalize(&[0.0]), vec![0.0]);
        assert_eq!(n.normalize(&[2.0]), vec![1.0]);
        assert_eq!(n.normalize(&[-2.0]), vec![-1.0]);
        assert_eq!(n.normalize(&[4.0]), vec![2.0]);
    }

    #[test]
    fn degenerate_dimension() {
        let n = Normalizer::fit(&[[1.0, 3.0], [2.0, 3.0]]).unwrap();
        assert_eq!(n.normalize(&[1.5, 3.0])[1], 0.0);
        assert_eq!(n.denormalize(&[0.4, 0.7])[1], 3.0);
    }

    #[test]
    fn fit_maps_extremes_exactly() {
        let rows = [[0.3, -5.0], [1.7, 2.0], [0.9, 11.0]];
        let n = Normalizer::fit(&rows).unwrap();
        assert_eq!(n.normalize(&[0.3, -5.0]), vec![-1.0, -1.0]);
        assert_eq!(n.normalize(&[1.7, 11.0]), vec![1.0, 1.0]);
    }

    #[test]
    fn fit_needs_data() {
        let empty: [[f64; 2]; 0] = [];
        assert!(matches!(Normalizer::fit(&empty), Err(Error::Contract(_))));
        assert!(Normalizer::from_bounds(vec![1.0], vec![0.0]).is_err());
    }

    proptest! {
        #[test]
        fn round_trip(lo in -10.0f64..10.0, width in 1e-3f64..20.0, x in -30.0f64..30.0) {
            let n = Normalizer::from_bounds(vec![lo], vec![lo + width]).unwrap();
            let back = n.denormalize(&n.normalize(&[x]))[0];
            prop_assert!((back - x).abs() <= 1e-12 * (1.0 + x.abs().max(lo.abs() + width)));
        }
    }
}
