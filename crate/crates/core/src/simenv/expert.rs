use super::arm::{forward_kinematics, jacobian, wrap_angle, ArmState, TaskSpec};

/// Damping of the least-squares inverse.
pub const EXPERT_DAMPING: f64 = 0.1;
/// Proportional gain on the Cartesian error.
pub const EXPERT_GAIN: f64 = 4.0;

/// Largest polar sweep (radians) toward the goal taken in one reference.
pub const EXPERT_SWEEP: f64 = 0.6;

/// Goals far around the base are approached through an intermediate point
/// swept at most [`EXPERT_SWEEP`] around the base, so the arm swings instead
/// of folding through the origin.
fn reference(ee: [f64; 2], goal: [f64; 2]) -> [f64; 2] {
    let re = ee[0].hypot(ee[1]);
    if re < 0.15 {
        return goal;
    }
    let (te, tg) = (ee[1].atan2(ee[0]), goal[1].atan2(goal[0]));
    let sweep = wrap_angle(tg - te);
    if sweep.abs() <= EXPERT_SWEEP {
        return goal;
    }
    let r = goal[0].hypot(goal[1]);
    let t = te + EXPERT_SWEEP * sweep.signum();
    [r * t.cos(), r * t.sin()]
}

/// Damped-least-squares joint velocity toward the expert's goal,
/// `J^T (J J^T + lambda^2 I)^-1 k e`, rescaled so that every component fits
/// inside the action clip.
pub fn expert_action(task: &TaskSpec, state: &ArmState) -> [f64; 2] {
    let ee = forward_kinematics(task.link_lengths, state.q);
    let goal = reference(ee, state.targets[state.expert_goal.min(state.targets.len() - 1)]);
    let e = [EXPERT_GAIN * (goal[0] - ee[0]), EXPERT_GAIN * (goal[1] - ee[1])];
    let j = jacobian(task.link_lengths, state.q);
    let l2 = EXPERT_DAMPING * EXPERT_DAMPING;
    // A = J J^T + l2 I (symmetric positive definite).
    let a00 = j[0][0] * j[0][0] + j[0][1] * j[0][1] + l2;
    let a01 = j[0][0] * j[1][0] + j[0][1] * j[1][1];
    let a11 = j[1][0] * j[1][0] + j[1][1] * j[1][1] + l2;
    let det = a00 * a11 - a01 * a01;
    let y = [(a11 * e[0] - a01 * e[1]) / det, (a00 * e[1] - a01 * e[0]) / det];
    let mut dq = [j[0][0] * y[0] + j[1][0] * y[1], j[0][1] * y[0] + j[1][1] * y[1]];
    let peak = dq[0].abs().max(dq[1].abs());
    if peak > task.action_clip {
        let s = task.action_clip / peak;
        dq = [dq[0] * s, dq[1] * s];
    }
    dq
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;
    use crate::numcore::Rng;
    use crate::simenv::arm::{env_reset, env_step};

    #[test]
    fn zero_at_goal() {
        let task = TaskSpec::reach();
        let q = [0.4, 1.2];
        let s = ArmState {
            q,
            targets: vec![forward_kinematics(task.link_lengths, q)],
            expert_goal: 0,
            step_index: 0,
        };
        let a = expert_action(&task, &s);
        assert!(a[0].abs() < 1e-15 && a[1].abs() < 1e-15);
    }

    #[test]
    fn finite_and_bounded_everywhere() {
        let task = TaskSpec::reach();
        let mut rng = Rng::new(11);
        for i in 0..20_000 {
            let mut s = env_reset(&task, &mut rng);
            if i % 4 == 0 {
                s.q[1] = PI;
            }
            let a = expert_action(&task, &s);
            assert!(a.iter().all(|v| v.is_finite() && v.abs() <= 1.0 + 1e-12));
        }
    }

    #[test]
    fn descends_toward_goal() {
        let task = TaskSpec::reach();
        let mut rng = Rng::new(12);
        for _ in 0..1000 {
            let mut s = env_reset(&task, &mut rng);
            let g = s.targets[0];
            // Start within the direct-approach cone of the goal.
            let tg = g[1].atan2(g[0]);
            s.q[0] = tg + rng.uniform_in(-0.3, 0.3) - s.q[1] / 2.0;
            let d0 = super::super::arm::distance(s.end_effector(&task), g);
            let n = env_step(&task, &s, expert_action(&task, &s));
            let d1 = super::super::arm::distance(n.end_effector(&task), g);
            assert!(d1 <= d0 + 1e-3, "{d0} -> {d1}");
        }
    }
}
