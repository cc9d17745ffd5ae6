use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Tensor;

/// `N x 3` Cartesian points in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    points: Vec<[f64; 3]>,
}

impl PointCloud {
    pub fn new(points: Vec<[f64; 3]>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Range("point cloud must hold at least one point".into()));
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("point cloud has non-finite coordinates".into()));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
        }
    }

    /// `(N, 3)` tensor of the coordinates.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            vec![self.points.len(), 3],
            self.points.iter().flatten().copied().collect(),
        )
        .expect("N x 3")
    }
}

pub(crate) fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Farthest point sampling.
///
/// Starts at `start`, then repeatedly picks the unselected point whose
/// distance to the selected set is largest. Distances are compared squared;
/// exact ties go to the lowest index.
pub fn fps(cloud: &PointCloud, m: usize, start: usize) -> Result<Vec<usize>> {
    let n = cloud.len();
    if m == 0 || m > n {
        return Err(Error::Range(format!("cannot pick {m} of {n} points")));
    }
    if start >= n {
        return Err(Error::Range(format!("start index {start} out of {n}")));
    }
    let pts = cloud.points();
    let mut selected = Vec::with_capacity(m);
    let mut taken = vec![false; n];
    let mut nearest = vec![f64::INFINITY; n];
    let mut current = start;
    loop {
        selected.push(current);
        taken[current] = true;
        if selected.len() == m {
            break;
        }
        let mut best: Option<(usize, f64)> = None;
        for i in 0..n {
            if taken[i] {
                continue;
            }
            let d = dist2(&pts[i], &pts[current]);
            if d < nearest[i] {
                nearest[i] = d;
            }
            match best {
                Some((_, bd)) if nearest[i] <= bd => {}
                _ => best = Some((i, nearest[i])),
            }
        }
        current = best.expect("m <= n leaves an unselected point").0;
    }
    Ok(selected)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(xs: &[f64]) -> PointCloud {
        PointCloud::new(xs.iter().map(|&x| [x, 0.0, 0.0]).collect()).unwrap()
    }

    #[test]
    fn exhaustive_pick_is_permutation() {
        let c = line(&[0.3, 0.1, 0.9, 0.5, 0.7]);
        let mut idx = fps(&c, 5, 2).unwrap();
        assert_eq!(idx[0], 2);
        idx.sort();
        assert_eq!(idx, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn collinear_example() {
        // Points at x = 0, 1, 2, 9 stored out of order.
        let c = line(&[1.0, 9.0, 0.0, 2.0]);
        assert_eq!(fps(&c, 2, 2).unwrap(), vec![2, 1]);
        // min(2, 7) = 2 beats min(1, 8) = 1.
        assert_eq!(fps(&c, 3, 2).unwrap(), vec![2, 1, 3]);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let c = line(&[-1.0, 0.0, 1.0]);
        assert_eq!(fps(&c, 2, 1).unwrap(), vec![1, 0]);
    }

    #[test]
    fn duplicates_still_distinct() {
        let c = line(&[0.0, 0.0, 0.0]);
        assert_eq!(fps(&c, 3, 0).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn range_errors() {
        let c = line(&[0.0, 1.0]);
        assert!(matches!(fps(&c, 3, 0), Err(Error::Range(_))));
        assert!(matches!(fps(&c, 1, 2), Err(Error::Range(_))));
        assert!(matches!(fps(&c, 0, 0), Err(Error::Range(_))));
        assert!(PointCloud::new(vec![]).is_err());
    }
}
