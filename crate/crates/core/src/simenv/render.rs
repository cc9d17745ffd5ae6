use std::f64::consts::PI;

use crate::perception::PointCloud;

use super::arm::{elbow_position, forward_kinematics, ArmState, TaskSpec};

pub const POINTS_PER_LINK: usize = 48;
/// Marker points shared among the active goals.
pub const MARKER_POINTS: usize = 32;
pub const CLOUD_POINTS: usize = 2 * POINTS_PER_LINK + MARKER_POINTS;
pub const MARKER_RADIUS: f64 = 0.03;

fn segment(a: [f64; 2], b: [f64; 2], out: &mut Vec<[f64; 3]>) {
    for k in 0..POINTS_PER_LINK {
        let s = k as f64 / (POINTS_PER_LINK - 1) as f64;
        out.push([a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1]), 0.0]);
    }
}

/// Sunflower pattern filling a horizontal disc.
fn disc(center: [f64; 2], z: f64, n: usize, out: &mut Vec<[f64; 3]>) {
    let golden = PI * (3.0 - 5f64.sqrt());
    for k in 0..n {
        let r = MARKER_RADIUS * ((k as f64 + 0.5) / n as f64).sqrt();
        let (s, c) = (k as f64 * golden).sin_cos();
        out.push([center[0] + r * c, center[1] + r * s, z]);
    }
}

/// Links sampled at z = 0, goal markers at `task.marker_height`.
/// Always [`CLOUD_POINTS`] points: link 1, link 2, then the markers.
pub fn render_cloud(task: &TaskSpec, state: &ArmState) -> PointCloud {
    let mut pts = Vec::with_capacity(CLOUD_POINTS);
    let elbow = elbow_position(task.link_lengths, state.q);
    let ee = forward_kinematics(task.link_lengths, state.q);
    segment([0.0, 0.0], elbow, &mut pts);
    segment(elbow, ee, &mut pts);
    let goals = state.targets.len().max(1);
    for (i, &g) in state.targets.iter().enumerate() {
        let n = MARKER_POINTS / goals + usize::from(i < MARKER_POINTS % goals);
        disc(g, task.marker_height, n, &mut pts);
    }
    PointCloud::new(pts).expect("rendered cloud is finite and non-empty")
}
