use super::field::VelocityField;
use crate::error::{Error, Result};
use crate::numcore::Tensor;

fn check_time(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Range(format!("time {t} outside [0, 1]")));
    }
    Ok(())
}

/// Linear path `x_t = (1 - t) x0 + t x1`.
pub fn interpolate(x0: &Tensor, x1: &Tensor, t: f64) -> Result<Tensor> {
    check_time(t)?;
    if x0.shape() != x1.shape() {
        return Err(Error::Dimension(format!("{:?} vs {:?}", x0.shape(), x1.shape())));
    }
    let data = x0
        .data()
        .iter()
        .zip(x1.data())
        .map(|(a, b)| (1.0 - t) * a + t * b)
        .collect();
    Tensor::new(x0.shape().to_vec(), data)
}

/// Row-wise interpolation with one time per row.
pub fn interpolate_rows(x0: &Tensor, x1: &Tensor, t: &[f64]) -> Result<Tensor> {
    if x0.shape() != x1.shape() || t.len() != x0.rows() {
        return Err(Error::Dimension(format!(
            "{:?} vs {:?} with {} times",
            x0.shape(),
            x1.shape(),
            t.len()
        )));
    }
    let mut out = x0.clone();
    for (r, &tr) in t.iter().enumerate() {
        check_time(tr)?;
        for (o, &b) in out.row_mut(r).iter_mut().zip(x1.row(r)) {
            *o = (1.0 - tr) * *o + tr * b;
        }
    }
    Ok(out)
}

/// `x + span * v`, rowwise with per-row spans.
pub(crate) fn extrapolate(x: &Tensor, v: &Tensor, span: &[f64]) -> Tensor {
    let mut out = x.clone();
    for (r, &s) in span.iter().enumerate() {
        for (o, &vv) in out.row_mut(r).iter_mut().zip(v.row(r)) {
            *o += s * vv;
        }
    }
    out
}

/// Straight-line extrapolation of `x_t` to the end of segment `segment`:
/// `x_t + ((i + 1)/K - t) * v(t, x_t)`.
pub fn f_map<F: VelocityField + ?Sized>(
    field: &F,
    t: f64,
    x_t: &Tensor,
    cond: Option<&Tensor>,
    segment: usize,
    segments: usize,
) -> Result<Tensor> {
    if segments == 0 || segment >= segments {
        return Err(Error::Range(format!("segment {segment} of {segments}")));
    }
    let lo = segment as f64 / segments as f64;
    let hi = (segment + 1) as f64 / segments as f64;
    if !(lo..=hi).contains(&t) {
        return Err(Error::Range(format!("time {t} outside segment [{lo}, {hi}]")));
    }
    let ts = vec![t; x_t.rows()];
    let v = field.velocity(&ts, x_t, cond)?;
    Ok(extrapolate(x_t, &v, &vec![hi - t; x_t.rows()]))
}
