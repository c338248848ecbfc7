//! Result rows shared by `run` and `sweep`, and the JSON run summary.

use std::fs::OpenOptions;
use std::path::Path;

use relaxed_bp::engines::EngineConfig;
use relaxed_bp::schedulers::SchedulerKind;
use serde::{Deserialize, Serialize};

use crate::error::CliResult;

/// One engine run. The first eleven columns are the sweep contract; the
/// rest complete the configuration so a row can be replayed on its own.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub model: String,
    pub variant: String,
    pub scheduler: String,
    pub workers: usize,
    #[serde(rename = "H")]
    pub splash_h: usize,
    pub seed: u64,
    pub rep: usize,
    pub time_s: f64,
    pub updates: u64,
    pub converged: bool,
    /// Empty for models without ground truth.
    pub decode_success: Option<bool>,
    pub threshold: f64,
    pub check_interval: usize,
    pub time_cap_s: f64,
    /// Queues per worker for `mq`, q for `sim`, empty for `exact`.
    pub relaxation: Option<usize>,
}

impl ResultRow {
    pub fn new(model: &str, config: &EngineConfig, seed: u64, rep: usize) -> Self {
        Self {
            model: model.to_string(),
            variant: config.variant.name().to_string(),
            scheduler: config.scheduler.name().to_string(),
            workers: config.workers,
            splash_h: config.splash_h,
            seed,
            rep,
            time_s: 0.0,
            updates: 0,
            converged: false,
            decode_success: None,
            threshold: config.threshold,
            check_interval: config.check_interval,
            time_cap_s: config.time_cap_s,
            relaxation: match config.scheduler {
                SchedulerKind::Exact => None,
                SchedulerKind::Multiqueue { queues_per_worker } => Some(queues_per_worker),
                SchedulerKind::Simulated { q } => Some(q),
            },
        }
    }

    /// Sequential exact residual BP: the reference for update ratios.
    pub fn is_baseline(&self) -> bool {
        self.variant == "residual" && self.scheduler == "exact" && self.workers == 1
    }
}

/// Writes `rows` as CSV, adding the header only when `out` is empty so the
/// same file can collect many invocations.
pub fn append_rows<W: std::io::Write>(out: W, rows: &[ResultRow], header: bool) -> CliResult<()> {
    let mut w = csv::WriterBuilder::new().has_headers(header).from_writer(out);
    if rows.is_empty() && header {
        w.write_record(ROW_HEADER)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub const ROW_HEADER: [&str; 15] = [
    "model",
    "variant",
    "scheduler",
    "workers",
    "H",
    "seed",
    "rep",
    "time_s",
    "updates",
    "converged",
    "decode_success",
    "threshold",
    "check_interval",
    "time_cap_s",
    "relaxation",
];

pub fn append_rows_to_file(path: &Path, rows: &[ResultRow]) -> CliResult<()> {
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = OpenOptions::new().create(true).append(true).open(path)?;
    append_rows(file, rows, fresh)
}

pub fn read_rows(path: &Path) -> CliResult<Vec<ResultRow>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut r = csv::Reader::from_path(path)?;
    let rows = r.deserialize().collect::<Result<Vec<ResultRow>, _>>()?;
    Ok(rows)
}

/// Mean update count of the recorded baseline runs on the same model, seed
/// and threshold.
pub fn baseline_updates(rows: &[ResultRow], model: &str, seed: u64, threshold: f64) -> Option<f64> {
    let hits: Vec<u64> = rows
        .iter()
        .filter(|r| r.is_baseline() && r.model == model && r.seed == seed && r.threshold == threshold)
        .map(|r| r.updates)
        .collect();
    if hits.is_empty() {
        None
    } else {
        Some(hits.iter().sum::<u64>() as f64 / hits.len() as f64)
    }
}

/// JSON summary printed by `run`.
#[derive(Debug, Clone, Serialize)]
pub struct BenchResult {
    pub model: String,
    pub config: EngineConfig,
    pub reps: usize,
    pub wall_time_s: f64,
    pub total_updates: f64,
    /// Mean updates over the mean of the recorded baseline runs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub update_ratio: Option<f64>,
    /// True when every repetition converged.
    pub converged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decode_success: Option<bool>,
    pub runs: Vec<ResultRow>,
}

impl BenchResult {
    pub fn from_rows(model: &str, config: EngineConfig, runs: Vec<ResultRow>) -> Self {
        let k = runs.len().max(1) as f64;
        let decode = runs.iter().map(|r| r.decode_success).collect::<Option<Vec<bool>>>();
        Self {
            model: model.to_string(),
            reps: runs.len(),
            wall_time_s: runs.iter().map(|r| r.time_s).sum::<f64>() / k,
            total_updates: runs.iter().map(|r| r.updates as f64).sum::<f64>() / k,
            update_ratio: None,
            converged: runs.iter().all(|r| r.converged),
            decode_success: decode.map(|d| d.iter().all(|&b| b)),
            config,
            runs,
        }
    }
}
