use crate::error::{Error, Result};
use crate::numcore::Tensor;
use crate::perception::{fps, CloudEncoder, Normalizer, PointCloud};
use crate::simenv::Observation;

/// Farthest-point downsampling from index 0; clouds already small enough
/// are returned whole.
pub fn downsample(cloud: &PointCloud, points: usize) -> Result<PointCloud> {
    if cloud.len() <= points {
        return Ok(cloud.clone());
    }
    Ok(cloud.select(&fps(cloud, points, 0)?))
}

/// The last `horizon` observations, oldest first, repeating the earliest
/// available frame when the episode is younger than the horizon.
pub fn stack_history(history: &[Observation], horizon: usize) -> Result<Vec<&Observation>> {
    if history.is_empty() {
        return Err(Error::Contract("observation history is empty".into()));
    }
    let n = history.len();
    Ok((0..horizon)
        .map(|k| &history[(n + k).saturating_sub(horizon)])
        .collect())
}

/// Lays out condition rows as `[visual_0 .. visual_{h-1} | state_0 .. state_{h-1}]`.
///
/// `visual` holds one embedding per frame, `rows x horizon` of them in
/// row-major order; `states` holds the normalized state of every frame of a
/// row side by side.
pub fn assemble_condition(visual: &Tensor, states: &Tensor, horizon: usize) -> Result<Tensor> {
    let rows = states.rows();
    if visual.rows() != rows * horizon {
        return Err(Error::Dimension(format!(
            "{} visual rows for {rows} conditions of {horizon} frames",
            visual.rows()
        )));
    }
    let v = visual.last_dim();
    let width = horizon * v + states.last_dim();
    let mut data = Vec::with_capacity(rows * width);
    for r in 0..rows {
        for k in 0..horizon {
            data.extend_from_slice(visual.row(r * horizon + k));
        }
        data.extend_from_slice(states.row(r));
    }
    Tensor::new(vec![rows, width], data)
}

/// Gradient of the visual embeddings given the gradient of assembled
/// condition rows; inverse layout of [`assemble_condition`].
pub fn visual_gradient(cond_grad: &Tensor, horizon: usize, visual_dim: usize) -> Tensor {
    let rows = cond_grad.rows();
    let mut out = Tensor::zeros(&[rows * horizon, visual_dim]);
    for r in 0..rows {
        let src = &cond_grad.row(r)[..horizon * visual_dim];
        for k in 0..horizon {
            out.row_mut(r * horizon + k)
                .copy_from_slice(&src[k * visual_dim..(k + 1) * visual_dim]);
        }
    }
    out
}

/// Condition vector for exactly `frames.len()` observations: each cloud is
/// downsampled and encoded, then both embeddings are followed by both
/// normalized robot states.
pub fn build_condition(
    encoder: &CloudEncoder,
    state_norm: &Normalizer,
    fps_points: usize,
    frames: &[&Observation],
    horizon: usize,
) -> Result<Tensor> {
    if frames.len() != horizon {
        return Err(Error::Contract(format!(
            "condition needs {horizon} frames, got {}",
            frames.len()
        )));
    }
    let clouds = frames
        .iter()
        .map(|o| downsample(&o.cloud, fps_points))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&PointCloud> = clouds.iter().collect();
    let visual = encoder.encode(&refs)?;
    let mut states = Vec::with_capacity(horizon * state_norm.dim());
    for o in frames {
        if o.robot_state.len() != state_norm.dim() {
            return Err(Error::Dimension("robot state width differs from the normalizer".into()));
        }
        states.extend(state_norm.normalize(&o.robot_state));
    }
    let states = Tensor::new(vec![1, states.len()], states)?;
    assemble_condition(&visual, &states, horizon)
}
