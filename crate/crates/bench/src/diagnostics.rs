//! Self-checks runnable from the CLI: finite-difference gradient checks and
//! closed-form oracle checks.

use flowpolicy::flowmatch::{
    cfm_loss, cfm_loss_value, consistency_fm_loss, consistency_fm_loss_value, interpolate, sample_euler,
    sample_onestep, sample_segments, ConstantField, CountingField, CouplingBatch, EmaParams, MlpField,
    PointTargetField, SegmentSchedule,
};
use flowpolicy::numcore::{grad_check, Parameters, Rng, Tensor};
use flowpolicy::perception::{fps, CloudEncoder, Normalizer, PointCloud};
use flowpolicy::policy::{downsample, Objective, PolicyConfig, PolicyNet};
use flowpolicy::simenv::{env_reset, Observation, TaskSpec, ROBOT_STATE_DIM};

use crate::error::Result;

pub const GRAD_TOLERANCE: f64 = 1e-4;

/// Outcome of one named check.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.into(),
            passed,
            detail,
        }
    }
}

impl std::fmt::Display for Check {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mark = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{mark} {:<28} {}", self.name, self.detail)
    }
}

fn perturbed<P: Parameters + Clone>(p: &P, scale: f64, rng: &mut Rng) -> P {
    let mut q = p.clone();
    for t in q.parameters_mut() {
        for v in t.data_mut() {
            *v += scale * rng.gaussian();
        }
    }
    q
}

fn grad_entry(name: &str, err: f64) -> Check {
    Check::new(name, err <= GRAD_TOLERANCE, format!("max relative error {err:.2e}"))
}

fn field_check(seed: u64, segments: Option<usize>) -> Result<f64> {
    let mut rng = Rng::new(seed);
    let mut field = MlpField::new(4, 3, &[8, 8], &mut rng)?;
    let target = perturbed(&field, 0.05, &mut rng);
    let rows = 6;
    let x1 = Tensor::new(vec![rows, 4], rng.gaussian_vec(rows * 4))?;
    let cond = Tensor::new(vec![rows, 3], rng.gaussian_vec(rows * 3))?;
    let err = match segments {
        None => {
            let batch = CouplingBatch::draw_cfm(x1, Some(cond), 1e-3, &mut rng)?;
            grad_check(
                &mut field,
                |f| cfm_loss(f, &batch).map(|o| (o.loss, o.grads)),
                1e-5,
            )?
        }
        Some(k) => {
            let mut sched = SegmentSchedule::uniform(k);
            sched.alpha = 0.5;
            let batch = CouplingBatch::draw_consistency(x1, Some(cond), &sched, &mut rng)?;
            grad_check(
                &mut field,
                |f| consistency_fm_loss(f, &target, &sched, &batch).map(|o| (o.loss, o.grads)),
                1e-5,
            )?
        }
    };
    Ok(err)
}

fn composite_check(seed: u64, objective: Objective) -> Result<f64> {
    let cfg = PolicyConfig {
        hidden: vec![8],
        ..Default::default()
    };
    let mut rng = Rng::new(seed);
    let encoder = CloudEncoder::with_dims(&[3, 5, 6], 4, &mut rng)?;
    let cond = cfg.obs_horizon * (4 + ROBOT_STATE_DIM);
    let field = MlpField::new(cfg.chunk_dim(), cond, &cfg.hidden, &mut rng)?;
    let mut net = PolicyNet::from_parts(encoder, field, cfg.obs_horizon)?;
    let target = perturbed(&net, 0.05, &mut rng);
    let task = TaskSpec::reach();
    let rows = 3;
    let clouds = (0..rows * cfg.obs_horizon)
        .map(|_| downsample(&Observation::capture(&task, &env_reset(&task, &mut rng)).cloud, 12))
        .collect::<flowpolicy::Result<Vec<PointCloud>>>()?;
    let frames: Vec<&PointCloud> = clouds.iter().collect();
    let sdim = cfg.obs_horizon * ROBOT_STATE_DIM;
    let states = Tensor::new(vec![rows, sdim], rng.gaussian_vec(rows * sdim))?;
    let adim = cfg.chunk_dim();
    let x1 = Tensor::new(vec![rows, adim], rng.gaussian_vec(rows * adim))?;
    let sched = SegmentSchedule::uniform(2);
    let coupling = match objective {
        Objective::Cfm => CouplingBatch::draw_cfm(x1, None, 1e-3, &mut rng)?,
        Objective::Consistency => CouplingBatch::draw_consistency(x1, None, &sched, &mut rng)?,
    };
    Ok(grad_check(
        &mut net,
        |n| n.objective(&target, objective, &sched, &frames, &states, &coupling, cfg.obs_horizon),
        1e-5,
    )?)
}

/// Analytic gradients of every loss against central differences.
pub fn gradcheck(seed: u64) -> Result<Vec<Check>> {
    Ok(vec![
        grad_entry("cfm field", field_check(seed, None)?),
        grad_entry("consistency field K=1", field_check(seed + 1, Some(1))?),
        grad_entry("consistency field K=2", field_check(seed + 2, Some(2))?),
        grad_entry("composite consistency", composite_check(seed + 3, Objective::Consistency)?),
        grad_entry("composite cfm", composite_check(seed + 4, Objective::Cfm)?),
    ])
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn zero_loss(seed: u64) -> Result<Check> {
    let mut rng = Rng::new(seed);
    let point = vec![0.7, -1.3, 0.2];
    let rows = 64;
    let x1 = Tensor::from_rows(&vec![point.clone(); rows])?;
    let field = PointTargetField(point);
    let cfm = cfm_loss_value(&field, &CouplingBatch::draw_cfm(x1.clone(), None, 1e-3, &mut rng)?)?;
    let mut worst = cfm;
    for k in [1, 2, 4] {
        let sched = SegmentSchedule::uniform(k);
        let batch = CouplingBatch::draw_consistency(x1.clone(), None, &sched, &mut rng)?;
        worst = worst.max(consistency_fm_loss_value(&field, &field, &sched, &batch)?);
    }
    Ok(Check::new("exact field has zero loss", worst <= 1e-10, format!("largest loss {worst:.2e}")))
}

fn brute_fps(points: &[[f64; 3]], m: usize, start: usize) -> Vec<usize> {
    let d2 = |a: &[f64; 3], b: &[f64; 3]| (0..3).map(|i| (a[i] - b[i]).powi(2)).sum::<f64>();
    let mut chosen = vec![start];
    while chosen.len() < m {
        let mut best = (f64::NEG_INFINITY, 0);
        for (i, p) in points.iter().enumerate() {
            if chosen.contains(&i) {
                continue;
            }
            let d = chosen.iter().map(|&c| d2(p, &points[c])).fold(f64::INFINITY, f64::min);
            if d > best.0 {
                best = (d, i);
            }
        }
        chosen.push(best.1);
    }
    chosen
}

fn fps_oracle(seed: u64) -> Result<Check> {
    let mut rng = Rng::new(seed);
    let mut mismatches = 0;
    for trial in 0..20 {
        let n = 10 + trial * 3;
        let pts: Vec<[f64; 3]> = (0..n).map(|_| [rng.gaussian(), rng.gaussian(), rng.gaussian()]).collect();
        let m = 1 + rng.below(n);
        let start = rng.below(n);
        if fps(&PointCloud::new(pts.clone())?, m, start)? != brute_fps(&pts, m, start) {
            mismatches += 1;
        }
    }
    Ok(Check::new(
        "fps matches brute force",
        mismatches == 0,
        format!("{mismatches} of 20 clouds differ"),
    ))
}

fn ema_oracle(seed: u64) -> Result<Check> {
    let mut rng = Rng::new(seed);
    let a = MlpField::new(2, 0, &[4], &mut rng)?;
    let b = perturbed(&a, 1.0, &mut rng);
    let decay = 0.9;
    let mut ema = EmaParams::new(&a, decay)?;
    ema.update(&b)?;
    let mut err: f64 = 0.0;
    for ((s, x), y) in ema.shadow().parameters().iter().zip(a.parameters()).zip(b.parameters()) {
        let want: Vec<f64> = x.data().iter().zip(y.data()).map(|(x, y)| decay * x + (1.0 - decay) * y).collect();
        err = err.max(max_abs_diff(s.data(), &want));
    }
    Ok(Check::new("ema update", err <= 1e-12, format!("max deviation {err:.2e}")))
}

fn normalizer_oracle(seed: u64) -> Result<Check> {
    let mut rng = Rng::new(seed);
    let rows: Vec<Vec<f64>> = (0..50).map(|_| rng.gaussian_vec(5).iter().map(|v| 3.0 * v + 1.0).collect()).collect();
    let norm = Normalizer::fit(&rows)?;
    let mut round = 0.0f64;
    let mut outside = 0.0f64;
    for r in &rows {
        let y = norm.normalize(r);
        outside = outside.max(y.iter().map(|v| v.abs() - 1.0).fold(0.0, f64::max));
        round = round.max(max_abs_diff(&norm.denormalize(&y), r));
    }
    Ok(Check::new(
        "normalizer round trip",
        round <= 1e-12 && outside <= 1e-12,
        format!("round trip {round:.2e}, range excess {outside:.2e}"),
    ))
}

fn nfe_oracle() -> Result<Check> {
    let field = CountingField::new(ConstantField(vec![1.0, 0.5]));
    let x0 = Tensor::zeros(&[7, 2]);
    let mut counts = Vec::new();
    let one = sample_onestep(&field, &x0, None)?;
    counts.push((one.nfe, field.calls(), 1));
    field.reset();
    let seg = sample_segments(&field, &x0, None, 3)?;
    counts.push((seg.nfe, field.calls(), 3));
    field.reset();
    let eul = sample_euler(&field, &x0, None, 10)?;
    counts.push((eul.nfe, field.calls(), 10));
    let endpoint = max_abs_diff(one.x.row(0), &[1.0, 0.5]).max(max_abs_diff(eul.x.row(0), &[1.0, 0.5]));
    let ok = counts.iter().all(|&(r, c, w)| r == w && c == w) && endpoint <= 1e-12;
    Ok(Check::new(
        "sampler evaluation counts",
        ok,
        format!("(reported, counted, expected) {counts:?}"),
    ))
}

fn interpolation_oracle(seed: u64) -> Result<Check> {
    let mut rng = Rng::new(seed);
    let x0 = Tensor::new(vec![4, 3], rng.gaussian_vec(12))?;
    let x1 = Tensor::new(vec![4, 3], rng.gaussian_vec(12))?;
    let a = max_abs_diff(interpolate(&x0, &x1, 0.0)?.data(), x0.data());
    let b = max_abs_diff(interpolate(&x0, &x1, 1.0)?.data(), x1.data());
    let mid: Vec<f64> = x0.data().iter().zip(x1.data()).map(|(p, q)| 0.75 * p + 0.25 * q).collect();
    let c = max_abs_diff(interpolate(&x0, &x1, 0.25)?.data(), &mid);
    let err = a.max(b).max(c);
    Ok(Check::new("linear interpolation", err <= 1e-12, format!("max deviation {err:.2e}")))
}

/// Closed-form checks of the building blocks.
pub fn oracle_tests(seed: u64) -> Result<Vec<Check>> {
    Ok(vec![
        zero_loss(seed)?,
        fps_oracle(seed + 1)?,
        ema_oracle(seed + 2)?,
        normalizer_oracle(seed + 3)?,
        nfe_oracle()?,
        interpolation_oracle(seed + 4)?,
    ])
}
