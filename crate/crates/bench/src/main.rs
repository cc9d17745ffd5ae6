use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use flowpolicy::flowmatch::Sampler;
use flowpolicy::simenv::TaskSpec;
use flowpolicy_bench::commands::{cmd_bench, cmd_demo_gen, cmd_eval, cmd_train, default_dataset_path};
use flowpolicy_bench::config::RunConfig;
use flowpolicy_bench::diagnostics::{gradcheck, oracle_tests, Check};
use flowpolicy_bench::results::summary_table;
use flowpolicy_bench::{BenchError, Result};

#[derive(Parser)]
#[command(name = "flowpolicy", version, about = "Train, evaluate and benchmark flow policies on the planar arm")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Run configuration (TOML); defaults to the reference reach config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seeds with a single seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Record expert demonstrations.
    DemoGen {
        #[command(flatten)]
        common: Common,
        /// Dataset file to write.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a policy on a dataset.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        /// Output directory for the checkpoint and training log.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Sampler evaluated at checkpoints.
        #[arg(long)]
        sampler: Option<Sampler>,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        sampler: Option<Sampler>,
        /// Directory for results.jsonl / results.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full comparison: FlowPolicy vs. the CFM baseline over all seeds.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference gradient checks.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Closed-form checks of losses, sampling, FPS, EMA and normalization.
    OracleTests {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::reference(TaskSpec::reach()),
    };
    if let Some(s) = common.seed {
        cfg.seeds = vec![s];
    }
    cfg.validate()?;
    Ok(cfg)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| BenchError::io(dir, e))
}

fn report(checks: &[Check]) -> Result<()> {
    for c in checks {
        println!("{c}");
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        return Err(BenchError::Failed(format!("{failed} of {} checks failed", checks.len())));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::DemoGen { common, out } => {
            let cfg = load_config(&common)?;
            let seed = cfg.seeds[0];
            let out = out.unwrap_or_else(|| default_dataset_path(&cfg, seed));
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                ensure_dir(dir)?;
            }
            cmd_demo_gen(&cfg, seed, &out)?;
        }
        Command::Train {
            common,
            dataset,
            out,
            sampler,
            resume,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(s) = sampler {
                cfg.sampler = s;
            }
            let seed = cfg.seeds[0];
            let out = out.unwrap_or_else(|| cfg.out_dir.join(format!("train-seed{seed}")));
            ensure_dir(&out)?;
            cmd_train(&cfg, &dataset, seed, &out, resume.as_deref())?;
        }
        Command::Eval {
            common,
            checkpoint,
            sampler,
            out,
        } => {
            let cfg = load_config(&common)?;
            let out = out.unwrap_or_else(|| cfg.out_dir.join("eval"));
            ensure_dir(&out)?;
            let row = cmd_eval(&cfg, &checkpoint, sampler.unwrap_or(cfg.sampler), &cfg.seeds, &out)?;
            print!("{}", summary_table(std::slice::from_ref(&row)));
        }
        Command::Bench { common, out } => {
            let mut cfg = load_config(&common)?;
            if let Some(o) = out {
                cfg.out_dir = o;
            }
            ensure_dir(&cfg.out_dir)?;
            let rows = cmd_bench(&cfg, &cfg.out_dir)?;
            print!("{}", summary_table(&rows));
            if rows.iter().any(|r| r.error.is_some()) {
                return Err(BenchError::Failed("some cells failed; see the error column".into()));
            }
        }
        Command::Gradcheck { seed } => report(&gradcheck(seed)?)?,
        Command::OracleTests { seed } => report(&oracle_tests(seed)?)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
