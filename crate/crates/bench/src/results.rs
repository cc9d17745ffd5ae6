use std::path::Path;

use serde::{Deserialize, Serialize};

use flowpolicy::policy::mean_and_std;

use crate::error::{BenchError, Result};
use crate::format::write_atomic;

/// One method on one task, aggregated over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub task: String,
    pub method: String,
    pub sampler: String,
    pub nfe: usize,
    pub seeds: Vec<u64>,
    /// Final score of every seed, percent.
    pub seed_scores: Vec<f64>,
    pub success_mean: f64,
    /// Only with two or more seeds.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub success_std: Option<f64>,
    /// Wall time per act call, milliseconds, pooled over seeds.
    pub inference_ms_mean: f64,
    pub inference_ms_std: f64,
    /// Euler-10 time over this sampler's time on the same weights.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub speedup: Option<f64>,
    pub epochs: usize,
    pub demo_count: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

/// Fields that depend on the wall clock.
pub const WALL_TIME_FIELDS: [&str; 3] = ["inference_ms_mean", "inference_ms_std", "speedup"];

impl ResultRow {
    pub fn set_scores(&mut self, scores: Vec<f64>) {
        let (mean, std) = mean_and_std(&scores);
        self.success_mean = mean;
        self.success_std = (scores.len() >= 2).then_some(std);
        self.seed_scores = scores;
    }
}

/// Per-row CSV projection; list fields are joined with ';'.
#[derive(Debug, Serialize)]
struct CsvRow<'a> {
    task: &'a str,
    method: &'a str,
    sampler: &'a str,
    nfe: usize,
    seeds: String,
    seed_scores: String,
    success_mean: f64,
    success_std: Option<f64>,
    inference_ms_mean: f64,
    inference_ms_std: f64,
    speedup: Option<f64>,
    epochs: usize,
    demo_count: usize,
    error: Option<&'a str>,
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(";")
}

pub fn to_jsonl(rows: &[ResultRow]) -> String {
    rows.iter()
        .map(|r| serde_json::to_string(r).expect("result rows serialize") + "\n")
        .collect()
}

pub fn to_csv(rows: &[ResultRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(CsvRow {
            task: &r.task,
            method: &r.method,
            sampler: &r.sampler,
            nfe: r.nfe,
            seeds: join(&r.seeds),
            seed_scores: join(&r.seed_scores),
            success_mean: r.success_mean,
            success_std: r.success_std,
            inference_ms_mean: r.inference_ms_mean,
            inference_ms_std: r.inference_ms_std,
            speedup: r.speedup,
            epochs: r.epochs,
            demo_count: r.demo_count,
            error: r.error.as_deref(),
        })
        .map_err(|e| BenchError::Failed(format!("csv: {e}")))?;
    }
    let bytes = w.into_inner().map_err(|e| BenchError::Failed(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub fn read_jsonl(path: &Path) -> Result<Vec<ResultRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| BenchError::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l).map_err(|e| BenchError::Format {
                path: path.display().to_string(),
                reason: e.to_string(),
            })
        })
        .collect()
}

/// Writes `results.jsonl` and `results.csv` into `dir`.
pub fn write_results(dir: &Path, rows: &[ResultRow]) -> Result<()> {
    write_atomic(&dir.join("results.jsonl"), to_jsonl(rows).as_bytes())?;
    write_atomic(&dir.join("results.csv"), to_csv(rows)?.as_bytes())
}

/// Fixed-width table for terminals.
pub fn summary_table(rows: &[ResultRow]) -> String {
    let mut s = format!(
        "{:<16} {:<20} {:<10} {:>4} {:>16} {:>16} {:>8}\n",
        "task", "method", "sampler", "NFE", "success %", "ms / act", "speedup"
    );
    for r in rows {
        let success = match (r.error.as_ref(), r.success_std) {
            (Some(_), _) => "failed".to_owned(),
            (None, Some(sd)) => format!("{:.1} ± {:.1}", r.success_mean, sd),
            (None, None) => format!("{:.1}", r.success_mean),
        };
        let speedup = r.speedup.map_or_else(|| "-".to_owned(), |x| format!("{x:.1}x"));
        s.push_str(&format!(
            "{:<16} {:<20} {:<10} {:>4} {:>16} {:>16} {:>8}\n",
            r.task,
            r.method,
            r.sampler,
            r.nfe,
            success,
            format!("{:.3} ± {:.3}", r.inference_ms_mean, r.inference_ms_std),
            speedup
        ));
    }
    s
}

/// JSON value of a row with the wall-clock fields removed.
pub fn without_wall_time(row: &ResultRow) -> serde_json::Value {
    let mut v = serde_json::to_value(row).expect("result rows serialize");
    if let Some(obj) = v.as_object_mut() {
        for k in WALL_TIME_FIELDS {
            obj.remove(k);
        }
    }
    v
}
