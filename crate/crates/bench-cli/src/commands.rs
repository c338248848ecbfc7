use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use relaxed_bp::engines::{run as run_engine, EngineConfig, Variant};
use relaxed_bp::models::{LdpcGroundTruth, ModelKind, ModelSpec};
use relaxed_bp::mrf::{
    brute_force_marginals, exact_tree_marginals, is_forest, read_mrf_txt, write_mrf_txt,
    BRUTE_FORCE_LIMIT,
};
use relaxed_bp::schedulers::{
    measure_ranks, write_rank_trace, Adversary, BestLegal, ExactScheduler, FrontierStarving,
    MultiQueue, RandomLegal, Scheduler, SchedulerKind, SharedSim, SimScheduler, WorstLegal,
};
use relaxed_bp::tree_dynamics::{
    build_bad_instance_with_rounds, build_uniform_tree, run_optimal_schedule, run_tree_game,
    GameTrace, TreeInstance, TreeShape,
};
use relaxed_bp::{MarkovRandomField, Mrf, Real, SplitMix64};
use serde::Serialize;
use serde_json::json;

use crate::error::{CliError, CliResult};
use crate::marginals::{parse_marginals, write_marginals};
use crate::records::{append_rows_to_file, baseline_updates, read_rows, BenchResult, ResultRow};
use crate::{
    AdversaryArg, GenerateArgs, InstanceArg, Precision, RankTraceArgs, RunArgs, ScheduleArg,
    SchedulerArg, TreeGameArgs, VerifyArgs, DEFAULT_DECODE_THRESHOLD, DEFAULT_THRESHOLD,
};

pub(crate) fn parse_variant(s: &str) -> Result<Variant, String> {
    s.replace('-', "_").parse().map_err(|e: relaxed_bp::Error| e.to_string())
}

/// Ground truth of `model` lives next to it as `<model>.truth`.
pub(crate) fn truth_path(model: &Path) -> PathBuf {
    let mut s = model.as_os_str().to_owned();
    s.push(".truth");
    PathBuf::from(s)
}

pub(crate) fn load_truth(model: &Path) -> CliResult<Option<LdpcGroundTruth>> {
    let path = truth_path(model);
    if !path.exists() {
        return Ok(None);
    }
    let file = File::open(&path)?;
    Ok(Some(LdpcGroundTruth::parse(BufReader::new(file))?))
}

pub(crate) fn default_threshold(truth: &Option<LdpcGroundTruth>) -> f64 {
    if truth.is_some() {
        DEFAULT_DECODE_THRESHOLD
    } else {
        DEFAULT_THRESHOLD
    }
}

pub(crate) fn scheduler_kind(arg: SchedulerArg, queues_per_worker: usize, q: usize) -> SchedulerKind {
    match arg {
        SchedulerArg::Exact => SchedulerKind::Exact,
        SchedulerArg::Mq => SchedulerKind::Multiqueue { queues_per_worker },
        SchedulerArg::Sim => SchedulerKind::Simulated { q },
    }
}

fn load_model<T: Real>(path: &Path) -> CliResult<MarkovRandomField<T>> {
    read_mrf_txt(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// Runs `reps` repetitions of `config` (seeds `seed`, `seed + 1`, ...).
/// Returns one row per repetition and the marginals of the last one.
pub(crate) fn run_reps<T: Real>(
    mrf: &MarkovRandomField<T>,
    truth: Option<&LdpcGroundTruth>,
    model: &str,
    config: &EngineConfig,
    seed: u64,
    reps: usize,
) -> CliResult<(Vec<ResultRow>, Option<Vec<Vec<f64>>>)> {
    config.validate()?;
    if let Some(t) = truth {
        if t.transmitted.len() > mrf.node_count() {
            return Err(CliError::Io("ground truth has more bits than the model has nodes".into()));
        }
    }
    let mut rows = Vec::with_capacity(reps);
    let mut last = None;
    for rep in 0..reps {
        let mut c = config.clone();
        c.seed = seed.wrapping_add(rep as u64);
        let report = run_engine(mrf, &c)?;
        let mut row = ResultRow::new(model, &c, seed, rep);
        row.time_s = report.wall_time_s;
        row.updates = report.total_updates;
        row.converged = report.converged;
        row.decode_success = match (truth, &report.marginals) {
            (Some(t), Some(m)) => Some(t.decoded_by(m)),
            (Some(_), None) => Some(false),
            _ => None,
        };
        rows.push(row);
        last = report.marginals;
    }
    Ok((rows, last))
}

pub(crate) fn generate(args: GenerateArgs, out: &mut dyn Write) -> CliResult<()> {
    let path = args
        .out
        .ok_or_else(|| CliError::Usage("generate needs --out <path>".into()))?;
    let kind = match args.family {
        crate::Family::Tree { nodes } => ModelKind::Tree { nodes },
        crate::Family::Ising { rows, cols } => ModelKind::Ising { rows, cols },
        crate::Family::Potts { rows, cols } => ModelKind::Potts { rows, cols },
        crate::Family::Ldpc { constraints, eps } => ModelKind::Ldpc { constraints, epsilon: eps },
    };
    let spec = ModelSpec { kind, seed: args.seed };
    let (mrf, truth) = spec.generate::<f64>()?;
    let mut w = BufWriter::new(File::create(&path)?);
    write_mrf_txt(&mrf, &mut w)?;
    if let Some(t) = &truth {
        t.write(BufWriter::new(File::create(truth_path(&path))?))?;
    }
    writeln!(out, "nodes {} edges {}", mrf.node_count(), mrf.edge_count())?;
    Ok(())
}

pub(crate) fn run(args: RunArgs, out: &mut dyn Write, err: &mut dyn Write) -> CliResult<()> {
    if args.reps == 0 {
        return Err(CliError::Usage("--reps must be at least 1".into()));
    }
    let truth = load_truth(&args.model)?;
    let mut config = EngineConfig::new(args.variant);
    config.scheduler = scheduler_kind(args.scheduler, args.mq_queues_per_worker, args.sim_q);
    config.workers = args.workers;
    config.splash_h = args.splash_h;
    config.threshold = args.threshold.unwrap_or_else(|| default_threshold(&truth));
    config.check_interval = args.check_interval;
    config.time_cap_s = args.time_cap;
    config.seed = args.seed;
    config.snapshot_marginals = truth.is_some() || args.marginals.is_some();
    config.validate()?;

    let name = args.model.display().to_string();
    let (rows, marginals) = match args.precision {
        Precision::F64 => {
            let mrf: Mrf = load_model(&args.model)?;
            run_reps(&mrf, truth.as_ref(), &name, &config, args.seed, args.reps)?
        }
        Precision::F32 => {
            let mrf = load_model::<f32>(&args.model)?;
            run_reps(&mrf, truth.as_ref(), &name, &config, args.seed, args.reps)?
        }
    };

    if let Some(path) = &args.marginals {
        match &marginals {
            Some(m) => write_marginals(m, BufWriter::new(File::create(path)?))?,
            None => writeln!(err, "warning: no marginals were produced")?,
        }
    }

    let mut recorded = match &args.out {
        Some(p) => read_rows(p)?,
        None => Vec::new(),
    };
    recorded.extend(rows.iter().cloned());
    let mut result = BenchResult::from_rows(&name, config.clone(), rows);
    result.update_ratio = baseline_updates(&recorded, &name, args.seed, config.threshold)
        .filter(|&b| b > 0.0)
        .map(|b| result.total_updates / b);
    if let Some(p) = &args.out {
        append_rows_to_file(p, &result.runs)?;
    }
    serde_json::to_writer(&mut *out, &result)?;
    writeln!(out)?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct VerifyReport {
    oracle: &'static str,
    nodes: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_deviation: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    decode_success: Option<bool>,
}

pub(crate) fn verify(args: VerifyArgs, out: &mut dyn Write) -> CliResult<()> {
    let mrf: Mrf = load_model(&args.model)?;
    let marginals = parse_marginals(BufReader::new(File::open(&args.marginals)?))?;
    if marginals.len() != mrf.node_count()
        || marginals.iter().enumerate().any(|(i, m)| m.len() != mrf.domain(i))
    {
        return Err(CliError::Io("marginals do not match the model's domains".into()));
    }
    let deviation = |reference: Vec<Vec<f64>>| {
        reference
            .iter()
            .flatten()
            .zip(marginals.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max)
    };
    let report = if let Some(truth) = load_truth(&args.model)? {
        VerifyReport {
            oracle: "ldpc_truth",
            nodes: mrf.node_count(),
            max_deviation: None,
            decode_success: Some(truth.decoded_by(&marginals)),
        }
    } else if mrf.state_space_size() <= BRUTE_FORCE_LIMIT {
        VerifyReport {
            oracle: "brute_force",
            nodes: mrf.node_count(),
            max_deviation: Some(deviation(brute_force_marginals(&mrf)?)),
            decode_success: None,
        }
    } else if is_forest(&mrf) {
        VerifyReport {
            oracle: "tree",
            nodes: mrf.node_count(),
            max_deviation: Some(deviation(exact_tree_marginals(&mrf)?)),
            decode_success: None,
        }
    } else {
        return Err(relaxed_bp::Error::TooLarge(mrf.state_space_size()).into());
    };
    serde_json::to_writer(&mut *out, &report)?;
    writeln!(out)?;
    Ok(())
}

fn adversary(arg: AdversaryArg, seed: u64) -> Box<dyn Adversary> {
    match arg {
        AdversaryArg::Worst => Box::new(WorstLegal),
        AdversaryArg::Best => Box::new(BestLegal),
        AdversaryArg::Frontier => Box::new(FrontierStarving),
        AdversaryArg::Random => Box::new(RandomLegal(SplitMix64::new(seed))),
    }
}

pub(crate) fn tree_game(args: TreeGameArgs, out: &mut dyn Write) -> CliResult<()> {
    if args.q == 0 {
        return Err(CliError::Usage("--q must be at least 1".into()));
    }
    let instance: TreeInstance = match args.instance {
        InstanceArg::Binary => build_uniform_tree(TreeShape::FullBinary, args.n)?,
        InstanceArg::Random => build_uniform_tree(
            TreeShape::RandomMaxDegree { max_degree: args.max_degree, seed: args.seed },
            args.n,
        )?,
        InstanceArg::Bad => build_bad_instance_with_rounds(args.n, args.rounds)?,
    };
    let adv = adversary(args.adversary, args.seed);
    let trace: GameTrace = match args.schedule {
        ScheduleArg::Residual => run_tree_game(&instance, args.q, adv)?,
        ScheduleArg::Optimal => run_optimal_schedule(&instance, args.q, adv)?,
    };
    if let Some(path) = &args.trace {
        trace.write_csv(BufWriter::new(File::create(path)?))?;
    }
    let summary = json!({
        "nodes": instance.node_count(),
        "height": instance.height(),
        "q": args.q,
        "useful": trace.useful,
        "wasted": trace.wasted,
        "total": trace.total(),
        "max_frontier": trace.max_frontier,
    });
    serde_json::to_writer(&mut *out, &summary)?;
    writeln!(out)?;
    Ok(())
}

pub(crate) fn rank_trace(args: RankTraceArgs, out: &mut dyn Write) -> CliResult<()> {
    if args.keys == 0 {
        return Err(CliError::Usage("--keys must be at least 1".into()));
    }
    let scheduler: Box<dyn Scheduler> = match args.scheduler {
        SchedulerArg::Exact => Box::new(ExactScheduler::new(args.keys)),
        SchedulerArg::Mq => {
            if args.queues == 0 {
                return Err(CliError::Usage("--queues must be at least 1".into()));
            }
            Box::new(MultiQueue::new(args.keys, args.queues))
        }
        SchedulerArg::Sim => {
            if args.sim_q == 0 {
                return Err(CliError::Usage("--sim-q must be at least 1".into()));
            }
            Box::new(SharedSim::new(SimScheduler::new(args.sim_q, Box::new(WorstLegal))))
        }
    };
    let ranks = measure_ranks(scheduler.as_ref(), args.keys, args.ops, args.seed);
    match &args.out {
        Some(p) => {
            write_rank_trace(&ranks, BufWriter::new(File::create(p)?))?;
            let mean = ranks.iter().sum::<usize>() as f64 / ranks.len().max(1) as f64;
            let max = ranks.iter().copied().max().unwrap_or(0);
            writeln!(out, "{}", json!({ "pops": ranks.len(), "mean_rank": mean, "max_rank": max }))?;
        }
        None => write_rank_trace(&ranks, &mut *out)?,
    }
    Ok(())
}
