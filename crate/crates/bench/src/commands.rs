use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use flowpolicy::flowmatch::Sampler;
use flowpolicy::numcore::{OptimizerState, Rng};
use flowpolicy::policy::{evaluate, mean_and_std, EvalReport, FlowPolicy, Objective, PolicyConfig, Trainer};
use flowpolicy::simenv::{expert_policy, run_episode, EpisodeRecord, TaskSpec};

use crate::config::RunConfig;
use crate::error::{BenchError, Result};
use crate::format::{
    checkpoint_header, dataset_header, load_checkpoint, load_dataset, save_checkpoint, save_dataset, write_atomic,
    Checkpoint,
};
use crate::results::{write_results, ResultRow};
use crate::timing::time_act;

/// Evaluation episodes of run seed `s` use seed `EVAL_SEED_OFFSET + s`, so
/// they never replay a demonstration's initial state.
pub const EVAL_SEED_OFFSET: u64 = 1_000_000;

pub fn eval_seed(seed: u64) -> u64 {
    EVAL_SEED_OFFSET + seed
}

pub fn method_tag(objective: Objective, sampler: Sampler) -> String {
    let base = match objective {
        Objective::Consistency => "flowpolicy",
        Objective::Cfm => "cfm",
    };
    format!("{base}-{}", sampler.to_string().replace('-', ""))
}

fn log(msg: impl AsRef<str>) {
    eprintln!("[flowpolicy] {}", msg.as_ref());
}

/// Expert demonstrations for `seed`: attempt `i` runs from stream
/// `(seed, i)`; failed or zero-length episodes are skipped.
pub fn generate_demos(cfg: &RunConfig, seed: u64) -> Result<Vec<EpisodeRecord>> {
    let want = cfg.policy.demo_count;
    let budget = want * cfg.demo_retries;
    let mut demos = Vec::with_capacity(want);
    for attempt in 0..budget {
        if demos.len() == want {
            break;
        }
        let mut rng = Rng::with_stream(seed, attempt as u64);
        let rec = run_episode(expert_policy(&cfg.task), &cfg.task, &mut rng, cfg.task.max_steps);
        if rec.success && !rec.is_empty() {
            log(format!("demo {} (attempt {attempt}): success in {} steps", demos.len(), rec.steps));
            demos.push(rec);
        } else {
            log(format!(
                "attempt {attempt}: expert {} after {} steps, not recorded",
                if rec.success { "started at the goal" } else { "failed" },
                rec.steps
            ));
        }
    }
    if demos.len() < want {
        return Err(BenchError::Failed(format!(
            "expert produced only {} of {want} demonstrations in {budget} attempts",
            demos.len()
        )));
    }
    Ok(demos)
}

pub fn cmd_demo_gen(cfg: &RunConfig, seed: u64, out: &Path) -> Result<Vec<EpisodeRecord>> {
    let demos = generate_demos(cfg, seed)?;
    let header = dataset_header(&cfg.task, &cfg.hash(), seed, demos.len());
    save_dataset(out, &header, &demos)?;
    log(format!("wrote {} demonstrations to {}", demos.len(), out.display()));
    Ok(demos)
}

/// Loads demonstrations, warning when they were made under another config.
pub fn load_demos(cfg: &RunConfig, path: &Path) -> Result<Vec<EpisodeRecord>> {
    let data = load_dataset(path)?;
    if let Some(w) = data.header.hash_warning(&cfg.hash()) {
        log(format!("warning: {}: {w}", path.display()));
    }
    if data.task != cfg.task {
        return Err(BenchError::Config(format!(
            "{} was recorded on a different task spec",
            path.display()
        )));
    }
    Ok(data.demos)
}

/// One line of a training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LogEntry {
    Epoch { epoch: usize, loss: f64 },
    Eval { epoch: usize, sampler: String, success_rate: f64 },
}

/// Outcome of a training run with periodic evaluation.
#[derive(Debug, Clone)]
pub struct TrainRun {
    pub policy: FlowPolicy,
    pub optimizer: OptimizerState,
    pub epoch: usize,
    /// One report per evaluated sampler, in the order given.
    pub reports: Vec<(Sampler, EvalReport)>,
    pub log: Vec<LogEntry>,
}

impl TrainRun {
    /// Mean of the five best checkpoints, or of all of them when fewer
    /// than five were evaluated.
    pub fn score(&self, sampler: Sampler) -> Option<f64> {
        let (_, report) = self.reports.iter().find(|(s, _)| *s == sampler)?;
        report.final_score().or_else(|| {
            let rates = report.rates();
            (!rates.is_empty()).then(|| mean_and_std(&rates).0)
        })
    }
}

pub struct TrainSpec<'a> {
    pub task: &'a TaskSpec,
    pub policy: &'a PolicyConfig,
    pub seed: u64,
    pub samplers: &'a [Sampler],
    pub config_hash: &'a str,
    /// Rewritten at every evaluation checkpoint and at the end.
    pub checkpoint: Option<&'a Path>,
}

/// Trains to `spec.policy.epochs`, evaluating every sampler at each
/// checkpoint epoch and at the final epoch. A non-finite loss aborts the
/// run; the last checkpoint written stays on disk.
pub fn train_run(demos: &[EpisodeRecord], spec: &TrainSpec, resume: Option<Checkpoint>) -> Result<TrainRun> {
    let cfg = spec.policy;
    let mut trainer = match resume {
        Some(ck) => {
            let mut policy = ck.policy;
            policy.config.epochs = cfg.epochs;
            log(format!("resuming at epoch {}", ck.epoch));
            Trainer::resume(demos, policy, ck.optimizer, ck.epoch, ck.seed)?
        }
        None => Trainer::new(demos, cfg, spec.seed)?,
    };
    let cfg = trainer.config().clone();
    let mut reports: Vec<(Sampler, EvalReport)> = spec.samplers.iter().map(|s| (*s, EvalReport::default())).collect();
    let mut entries = Vec::new();
    while trainer.epoch() < cfg.epochs {
        let loss = trainer.run_epoch()?;
        let epoch = trainer.epoch();
        if !loss.is_finite() {
            return Err(flowpolicy::Error::Numeric(format!("loss became {loss} at epoch {epoch}")).into());
        }
        entries.push(LogEntry::Epoch { epoch, loss });
        if epoch % cfg.checkpoint_every != 0 && epoch != cfg.epochs {
            continue;
        }
        let policy = trainer.policy();
        for (sampler, report) in reports.iter_mut() {
            let summary = evaluate(&policy, spec.task, cfg.eval_episodes, eval_seed(trainer.seed()), *sampler)?;
            log(format!(
                "epoch {epoch}: loss {loss:.5}, {} success {:.0}%",
                sampler, summary.success_rate
            ));
            report.record(epoch, &summary);
            entries.push(LogEntry::Eval {
                epoch,
                sampler: sampler.to_string(),
                success_rate: summary.success_rate,
            });
        }
        if let Some(path) = spec.checkpoint {
            let header = checkpoint_header(spec.task, &cfg, spec.config_hash, epoch, trainer.seed());
            save_checkpoint(path, &header, &policy, trainer.optimizer())?;
        }
    }
    Ok(TrainRun {
        policy: trainer.policy(),
        optimizer: trainer.optimizer().clone(),
        epoch: trainer.epoch(),
        reports,
        log: entries,
    })
}

fn write_log(path: &Path, entries: &[LogEntry], append: bool) -> Result<()> {
    let mut text = if append && path.exists() {
        std::fs::read_to_string(path).map_err(|e| BenchError::io(path, e))?
    } else {
        String::new()
    };
    for e in entries {
        text.push_str(&serde_json::to_string(e).expect("log entries serialize"));
        text.push('\n');
    }
    write_atomic(path, text.as_bytes())
}

/// Trains on a dataset file; writes `checkpoint.bin` and `train_log.jsonl`
/// into `out_dir`.
pub fn cmd_train(cfg: &RunConfig, data: &Path, seed: u64, out_dir: &Path, resume: Option<&Path>) -> Result<TrainRun> {
    let demos = load_demos(cfg, data)?;
    let resume = match resume {
        Some(p) => {
            let ck = load_checkpoint(p)?;
            if let Some(w) = ck.header.hash_warning(&cfg.hash()) {
                log(format!("warning: {}: {w}", p.display()));
            }
            Some(ck)
        }
        None => None,
    };
    let appending = resume.is_some();
    let ckpt = out_dir.join("checkpoint.bin");
    let hash = cfg.hash();
    let spec = TrainSpec {
        task: &cfg.task,
        policy: &cfg.policy,
        seed,
        samplers: &[cfg.sampler],
        config_hash: &hash,
        checkpoint: Some(&ckpt),
    };
    let run = train_run(&demos, &spec, resume)?;
    write_log(&out_dir.join("train_log.jsonl"), &run.log, appending)?;
    log(format!("checkpoint at epoch {} in {}", run.epoch, ckpt.display()));
    Ok(run)
}

/// Evaluates a checkpoint over the configured seeds (evaluation streams
/// only; the weights are fixed) and times `act`.
pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path, sampler: Sampler, seeds: &[u64], out_dir: &Path) -> Result<ResultRow> {
    let ck = load_checkpoint(checkpoint)?;
    if let Some(w) = ck.header.hash_warning(&cfg.hash()) {
        log(format!("warning: {}: {w}", checkpoint.display()));
    }
    let policy = &ck.policy;
    let mut scores = Vec::new();
    let mut calls = Vec::new();
    let mut reference = Vec::new();
    let mut nfe = sampler.nfe(policy.config.schedule.segments);
    for &s in seeds {
        let summary = evaluate(policy, &ck.task, policy.config.eval_episodes, eval_seed(s), sampler)?;
        log(format!("seed {s}: {sampler} success {:.0}%", summary.success_rate));
        scores.push(summary.success_rate);
        let t = time_act(policy, &ck.task, sampler, &cfg.timing, s)?;
        nfe = t.nfe;
        calls.extend(t.calls);
        if sampler != Sampler::Euler(10) {
            reference.extend(time_act(policy, &ck.task, Sampler::Euler(10), &cfg.timing, s)?.calls);
        }
    }
    let (ms, sd) = mean_and_std(&calls);
    let mut row = ResultRow {
        task: ck.task.variant.name().into(),
        method: method_tag(policy.config.objective, sampler),
        sampler: sampler.to_string(),
        nfe,
        seeds: seeds.to_vec(),
        seed_scores: vec![],
        success_mean: 0.0,
        success_std: None,
        inference_ms_mean: ms,
        inference_ms_std: sd,
        speedup: (!reference.is_empty()).then(|| mean_and_std(&reference).0 / ms),
        epochs: ck.epoch,
        demo_count: policy.config.demo_count,
        error: None,
    };
    row.set_scores(scores);
    write_results(out_dir, std::slice::from_ref(&row))?;
    Ok(row)
}

/// Per-seed measurements of one bench method.
#[derive(Debug, Default)]
struct MethodCells {
    scores: Vec<f64>,
    calls: Vec<f64>,
    reference_calls: Vec<f64>,
    nfe: usize,
    errors: Vec<String>,
}

struct SeedCell {
    flow_onestep: (f64, Vec<f64>, usize),
    flow_segments: (f64, Vec<f64>, usize),
    flow_euler: Vec<f64>,
    cfm: (f64, Vec<f64>, usize),
}

fn bench_seed(cfg: &RunConfig, seed: u64, dir: &Path) -> Result<SeedCell> {
    let data_path = dir.join("demos.bin");
    cmd_demo_gen(cfg, seed, &data_path)?;
    let demos = load_demos(cfg, &data_path)?;
    let hash = cfg.hash();

    let cfm_cfg = PolicyConfig {
        objective: Objective::Cfm,
        ..cfg.policy.clone()
    };
    let cfm_path = dir.join("cfm.ckpt");
    log(format!("seed {seed}: training the CFM baseline"));
    let cfm = train_run(
        &demos,
        &TrainSpec {
            task: &cfg.task,
            policy: &cfm_cfg,
            seed,
            samplers: &[Sampler::Euler(10)],
            config_hash: &hash,
            checkpoint: Some(&cfm_path),
        },
        None,
    )?;
    write_log(&dir.join("cfm_log.jsonl"), &cfm.log, false)?;

    let flow_cfg = PolicyConfig {
        objective: Objective::Consistency,
        ..cfg.policy.clone()
    };
    let flow_path = dir.join("flowpolicy.ckpt");
    log(format!("seed {seed}: training FlowPolicy"));
    let flow = train_run(
        &demos,
        &TrainSpec {
            task: &cfg.task,
            policy: &flow_cfg,
            seed,
            samplers: &[Sampler::OneStep, Sampler::Segments],
            config_hash: &hash,
            checkpoint: Some(&flow_path),
        },
        None,
    )?;
    write_log(&dir.join("flowpolicy_log.jsonl"), &flow.log, false)?;

    let timed = |p: &FlowPolicy, s: Sampler| time_act(p, &cfg.task, s, &cfg.timing, seed);
    let one = timed(&flow.policy, Sampler::OneStep)?;
    let seg = timed(&flow.policy, Sampler::Segments)?;
    let eul = timed(&flow.policy, Sampler::Euler(10))?;
    let base = timed(&cfm.policy, Sampler::Euler(10))?;
    let score = |run: &TrainRun, s: Sampler| run.score(s).expect("every run evaluates at its final epoch");
    Ok(SeedCell {
        flow_onestep: (score(&flow, Sampler::OneStep), one.calls, one.nfe),
        flow_segments: (score(&flow, Sampler::Segments), seg.calls, seg.nfe),
        flow_euler: eul.calls,
        cfm: (score(&cfm, Sampler::Euler(10)), base.calls, base.nfe),
    })
}

/// Trains and evaluates the CFM baseline and FlowPolicy on the same demos
/// for every seed; writes per-seed artifacts under `out_dir/seed-N` and the
/// aggregate rows to `results.jsonl` / `results.csv`.
pub fn cmd_bench(cfg: &RunConfig, out_dir: &Path) -> Result<Vec<ResultRow>> {
    let mut onestep = MethodCells::default();
    let mut segments = MethodCells::default();
    let mut cfm = MethodCells::default();
    for &seed in &cfg.seeds {
        let dir = out_dir.join(format!("seed-{seed}"));
        match bench_seed(cfg, seed, &dir) {
            Ok(cell) => {
                for (m, (score, calls, nfe), reference) in [
                    (&mut onestep, cell.flow_onestep, Some(&cell.flow_euler)),
                    (&mut segments, cell.flow_segments, Some(&cell.flow_euler)),
                    (&mut cfm, cell.cfm, None),
                ] {
                    m.scores.push(score);
                    m.calls.extend(calls);
                    m.nfe = nfe;
                    if let Some(r) = reference {
                        m.reference_calls.extend(r.iter().copied());
                    }
                }
            }
            Err(e) => {
                log(format!("seed {seed} failed: {e}"));
                for m in [&mut onestep, &mut segments, &mut cfm] {
                    m.errors.push(format!("seed {seed}: {e}"));
                }
            }
        }
    }
    let segs = cfg.policy.schedule.segments;
    let rows: Vec<ResultRow> = [
        (onestep, Objective::Consistency, Sampler::OneStep),
        (segments, Objective::Consistency, Sampler::Segments),
        (cfm, Objective::Cfm, Sampler::Euler(10)),
    ]
    .into_iter()
    .map(|(m, objective, sampler)| {
        let (ms, sd) = mean_and_std(&m.calls);
        let mut row = ResultRow {
            task: cfg.task.variant.name().into(),
            method: method_tag(objective, sampler),
            sampler: sampler.to_string(),
            nfe: if m.calls.is_empty() { sampler.nfe(segs) } else { m.nfe },
            seeds: cfg.seeds.clone(),
            seed_scores: vec![],
            success_mean: 0.0,
            success_std: None,
            inference_ms_mean: ms,
            inference_ms_std: sd,
            speedup: (!m.reference_calls.is_empty() && ms > 0.0).then(|| mean_and_std(&m.reference_calls).0 / ms),
            epochs: cfg.policy.epochs,
            demo_count: cfg.policy.demo_count,
            error: (!m.errors.is_empty()).then(|| m.errors.join("; ")),
        };
        row.set_scores(m.scores);
        row
    })
    .collect();
    write_results(out_dir, &rows)?;
    write_atomic(&out_dir.join("config.toml"), cfg.to_toml().as_bytes())?;
    Ok(rows)
}

pub fn default_dataset_path(cfg: &RunConfig, seed: u64) -> PathBuf {
    cfg.out_dir.join(format!("demos-seed{seed}.bin"))
}
