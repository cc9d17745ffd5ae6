use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use flowpolicy_bench::commands::LogEntry;
use flowpolicy_bench::config::RunConfig;
use flowpolicy_bench::format::load_checkpoint;
use flowpolicy_bench::results::read_jsonl;

fn smoke_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.toml")
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flowpolicy")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &Path, name: &str, edit: impl FnOnce(&mut RunConfig)) -> PathBuf {
    let mut cfg = RunConfig::load(&smoke_path()).unwrap();
    edit(&mut cfg);
    let path = dir.join(name);
    std::fs::write(&path, cfg.to_toml()).unwrap();
    path
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn log_entries(path: &Path) -> Vec<LogEntry> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn invalid_configs_exit_with_code_one() {
    let dir = tempfile::tempdir().unwrap();
    let zero = write_config(dir.path(), "zero.toml", |c| c.policy.demo_count = 0);
    let out = run(&["demo-gen", "--config", s(&zero), "--out", s(&dir.path().join("d.bin"))]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
    assert!(stderr(&out).contains("demo_count"), "{}", stderr(&out));

    let unknown = dir.path().join("unknown.toml");
    let text = std::fs::read_to_string(smoke_path()).unwrap();
    std::fs::write(&unknown, format!("bogus = 1\n{text}")).unwrap();
    let out = run(&["demo-gen", "--config", s(&unknown)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("bogus"), "{}", stderr(&out));
}

#[test]
fn missing_files_exit_with_code_two() {
    let out = run(&["eval", "--config", s(&smoke_path()), "--checkpoint", "/nonexistent/ckpt.bin"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_resume_and_eval() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("demos.bin");
    let out = run(&["demo-gen", "--config", s(&smoke_path()), "--seed", "2", "--out", s(&data)]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stderr(&out).contains("success"));

    let train_dir = dir.path().join("train");
    let out = run(&[
        "train", "--config", s(&smoke_path()), "--dataset", s(&data), "--seed", "2", "--out", s(&train_dir),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let ckpt_path = train_dir.join("checkpoint.bin");
    let ckpt = load_checkpoint(&ckpt_path).unwrap();
    assert_eq!(ckpt.epoch, 4);
    let first = log_entries(&train_dir.join("train_log.jsonl"));
    let epochs: Vec<usize> = first
        .iter()
        .filter_map(|e| match e {
            LogEntry::Epoch { epoch, .. } => Some(*epoch),
            _ => None,
        })
        .collect();
    assert_eq!(epochs, vec![1, 2, 3, 4]);
    assert_eq!(first.iter().filter(|e| matches!(e, LogEntry::Eval { .. })).count(), 2);

    let longer = write_config(dir.path(), "longer.toml", |c| c.policy.epochs = 6);
    let out = run(&[
        "train", "--config", s(&longer), "--dataset", s(&data), "--seed", "2", "--out", s(&train_dir),
        "--resume", s(&ckpt_path),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stderr(&out).contains("warning"), "config change should be reported: {}", stderr(&out));
    assert_eq!(load_checkpoint(&ckpt_path).unwrap().epoch, 6);
    let all = log_entries(&train_dir.join("train_log.jsonl"));
    assert_eq!(&all[..first.len()], &first[..]);
    assert!(matches!(all.last(), Some(LogEntry::Eval { epoch: 6, .. })));

    let eval_dir = dir.path().join("eval");
    let out = run(&[
        "eval", "--config", s(&smoke_path()), "--checkpoint", s(&ckpt_path), "--sampler", "segments", "--out",
        s(&eval_dir),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let rows = read_jsonl(&eval_dir.join("results.jsonl")).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].method, "flowpolicy-segments");
    assert_eq!(rows[0].nfe, 2);
    assert_eq!(rows[0].epochs, 6);
    assert!(rows[0].speedup.is_some());
    assert!(String::from_utf8_lossy(&out.stdout).contains("flowpolicy-segments"));
}

#[test]
fn bench_writes_all_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("bench");
    let out = run(&["bench", "--config", s(&smoke_path()), "--out", s(&out_dir)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let rows = read_jsonl(&out_dir.join("results.jsonl")).unwrap();
    let methods: Vec<&str> = rows.iter().map(|r| r.method.as_str()).collect();
    assert_eq!(methods, ["flowpolicy-onestep", "flowpolicy-segments", "cfm-euler10"]);
    let nfe: Vec<usize> = rows.iter().map(|r| r.nfe).collect();
    assert_eq!(nfe, [1, 2, 10]);
    assert!(rows.iter().all(|r| r.error.is_none() && r.seed_scores.len() == 1));
    assert!(out_dir.join("results.csv").exists());
    for f in ["demos.bin", "flowpolicy.ckpt", "cfm.ckpt", "flowpolicy_log.jsonl", "cfm_log.jsonl"] {
        assert!(out_dir.join("seed-0").join(f).exists(), "{f}");
    }
    let table = String::from_utf8_lossy(&out.stdout);
    assert!(table.contains("cfm-euler10"), "{table}");
}

#[test]
fn diagnostics_pass() {
    for cmd in ["gradcheck", "oracle-tests"] {
        let out = run(&[cmd]);
        assert!(out.status.success(), "{cmd}: {}", String::from_utf8_lossy(&out.stdout));
        assert!(!String::from_utf8_lossy(&out.stdout).contains("FAIL"));
    }
}
