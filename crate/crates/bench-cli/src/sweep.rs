//! Grid runs described by a TOML manifest.
//!
//! ```toml
//! reps = 5
//!
//! [[cell]]
//! model = "ising-100.mrf"   # relative to the manifest
//! variant = "residual"
//! scheduler = "mq"
//! workers = [1, 2, 4, 8]
//!
//! [[cell]]
//! generate = { kind = "tree", nodes = 1000, seed = 0 }
//! variant = "splash"
//! splash_h = 3
//! ```

use std::io::Write;
use std::path::Path;

use relaxed_bp::engines::{EngineConfig, Variant};
use relaxed_bp::models::{LdpcGroundTruth, ModelKind, ModelSpec};
use relaxed_bp::mrf::read_mrf_txt;
use relaxed_bp::Mrf;
use serde::Deserialize;

use crate::commands::{default_threshold, load_truth, parse_variant, run_reps, scheduler_kind};
use crate::error::{CliError, CliResult};
use crate::records::{append_rows, append_rows_to_file, ResultRow};
use crate::{SchedulerArg, DEFAULT_REPS};

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub reps: Option<usize>,
    #[serde(default)]
    pub cell: Vec<ManifestCell>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestCell {
    /// MRF-TXT file, relative paths resolved against the manifest.
    pub model: Option<String>,
    /// Generate the model in memory instead of reading a file.
    pub generate: Option<ModelSpec>,
    pub variant: String,
    #[serde(default = "default_scheduler")]
    pub scheduler: String,
    #[serde(default = "default_workers")]
    pub workers: Vec<usize>,
    pub splash_h: Option<usize>,
    pub threshold: Option<f64>,
    pub check_interval: Option<usize>,
    pub time_cap: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    pub reps: Option<usize>,
    pub mq_queues_per_worker: Option<usize>,
    pub sim_q: Option<usize>,
}

fn default_scheduler() -> String {
    "exact".into()
}

fn default_workers() -> Vec<usize> {
    vec![1]
}

impl Manifest {
    pub fn parse(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Io(format!("manifest: {e}")))
    }
}

fn spec_name(spec: &ModelSpec) -> String {
    match spec.kind {
        ModelKind::Tree { nodes } => format!("tree:{nodes}"),
        ModelKind::Ising { rows, cols } => format!("ising:{rows}x{cols}:seed{}", spec.seed),
        ModelKind::Potts { rows, cols } => format!("potts:{rows}x{cols}:seed{}", spec.seed),
        ModelKind::Ldpc { constraints, epsilon } => {
            format!("ldpc:{constraints}:eps{epsilon}:seed{}", spec.seed)
        }
    }
}

struct LoadedModel {
    name: String,
    mrf: Mrf,
    truth: Option<LdpcGroundTruth>,
}

fn load_cell_model(cell: &ManifestCell, base: &Path) -> CliResult<LoadedModel> {
    match (&cell.model, &cell.generate) {
        (Some(path), None) => {
            let full = base.join(path);
            let mrf = read_mrf_txt(&full).map_err(|e| CliError::Io(format!("{path}: {e}")))?;
            Ok(LoadedModel { name: path.clone(), mrf, truth: load_truth(&full)? })
        }
        (None, Some(spec)) => {
            let (mrf, truth) = spec.generate()?;
            Ok(LoadedModel { name: spec_name(spec), mrf, truth })
        }
        _ => Err(CliError::Usage("a cell needs exactly one of `model` and `generate`".into())),
    }
}

fn cell_config(cell: &ManifestCell, truth: &Option<LdpcGroundTruth>) -> CliResult<EngineConfig> {
    let variant: Variant = parse_variant(&cell.variant).map_err(CliError::Usage)?;
    let sched = match cell.scheduler.as_str() {
        "exact" => SchedulerArg::Exact,
        "mq" => SchedulerArg::Mq,
        "sim" => SchedulerArg::Sim,
        other => return Err(CliError::Usage(format!("unknown scheduler `{other}`"))),
    };
    let mut c = EngineConfig::new(variant);
    c.scheduler = scheduler_kind(sched, cell.mq_queues_per_worker.unwrap_or(4), cell.sim_q.unwrap_or(8));
    c.splash_h = cell.splash_h.unwrap_or(c.splash_h);
    c.threshold = cell.threshold.unwrap_or_else(|| default_threshold(truth));
    c.check_interval = cell.check_interval.unwrap_or(c.check_interval);
    c.time_cap_s = cell.time_cap.unwrap_or(c.time_cap_s);
    c.seed = cell.seed;
    c.snapshot_marginals = truth.is_some();
    Ok(c)
}

/// Rows recorded for a cell that could not run.
fn failed_rows(cell: &ManifestCell, reps: usize) -> Vec<ResultRow> {
    let name = cell
        .model
        .clone()
        .or_else(|| cell.generate.as_ref().map(spec_name))
        .unwrap_or_default();
    let mut rows = Vec::new();
    for &w in &cell.workers {
        for rep in 0..reps {
            let mut row = ResultRow::new(&name, &EngineConfig::new(Variant::Residual), cell.seed, rep);
            row.variant = cell.variant.clone();
            row.scheduler = cell.scheduler.clone();
            row.workers = w;
            row.splash_h = cell.splash_h.unwrap_or(row.splash_h);
            rows.push(row);
        }
    }
    rows
}

fn run_cell(cell: &ManifestCell, base: &Path, reps: usize) -> CliResult<Vec<ResultRow>> {
    let model = load_cell_model(cell, base)?;
    let mut config = cell_config(cell, &model.truth)?;
    let mut rows = Vec::new();
    for &w in &cell.workers {
        config.workers = w;
        let (r, _) = run_reps(&model.mrf, model.truth.as_ref(), &model.name, &config, cell.seed, reps)?;
        rows.extend(r);
    }
    Ok(rows)
}

/// Runs every cell; a failing cell is reported on `err` and recorded with
/// `converged = false` instead of aborting the sweep.
pub(crate) fn sweep(
    manifest_path: &Path,
    out_path: Option<&Path>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> CliResult<()> {
    let text = std::fs::read_to_string(manifest_path)
        .map_err(|e| CliError::Io(format!("{}: {e}", manifest_path.display())))?;
    let manifest = Manifest::parse(&text)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut first = true;
    let mut emit = |rows: &[ResultRow], out: &mut dyn Write| -> CliResult<()> {
        match out_path {
            Some(p) => append_rows_to_file(p, rows)?,
            None => append_rows(&mut *out, rows, first)?,
        }
        first = false;
        Ok(())
    };
    if manifest.cell.is_empty() {
        emit(&[], out)?;
    }
    for (k, cell) in manifest.cell.iter().enumerate() {
        let reps = cell.reps.or(manifest.reps).unwrap_or(DEFAULT_REPS);
        let rows = match run_cell(cell, base, reps) {
            Ok(rows) => rows,
            Err(e) => {
                writeln!(err, "cell {k}: {e}")?;
                failed_rows(cell, reps)
            }
        };
        emit(&rows, out)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_both_model_sources() {
        let m = Manifest::parse(
            r#"
            reps = 2
            [[cell]]
            model = "a.mrf"
            variant = "residual"
            scheduler = "mq"
            workers = [1, 2]

            [[cell]]
            generate = { kind = "ldpc", constraints = 10, epsilon = 0.07, seed = 3 }
            variant = "synchronous"
            "#,
        )
        .unwrap();
        assert_eq!(m.reps, Some(2));
        assert_eq!(m.cell.len(), 2);
        assert_eq!(m.cell[0].workers, vec![1, 2]);
        let spec = m.cell[1].generate.unwrap();
        assert_eq!(spec.kind, ModelKind::Ldpc { constraints: 10, epsilon: 0.07 });
        assert_eq!(spec.seed, 3);
        assert_eq!(m.cell[1].scheduler, "exact");
    }

    #[test]
    fn empty_manifest_has_no_cells() {
        assert!(Manifest::parse("").unwrap().cell.is_empty());
    }
}
