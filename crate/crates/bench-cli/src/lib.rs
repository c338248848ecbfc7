//! The `rbp` benchmark harness: model generation, engine runs, marginal
//! verification, parameter sweeps and the tree-game simulator.

mod commands;
mod error;
pub mod marginals;
pub mod records;
mod sweep;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use error::{CliError, CliResult};
pub use sweep::{Manifest, ManifestCell};

/// Threshold for models without ground truth.
pub const DEFAULT_THRESHOLD: f64 = 1e-5;
/// Threshold for decoding instances (those with a ground-truth sidecar).
pub const DEFAULT_DECODE_THRESHOLD: f64 = 1e-2;
pub const DEFAULT_REPS: usize = 5;

#[derive(Debug, Parser)]
#[command(name = "rbp", version, about = "Relaxed-scheduler belief propagation benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a benchmark model (and an LDPC ground-truth sidecar).
    Generate(GenerateArgs),
    /// Run one configuration; JSON to stdout, rows appended to --out.
    Run(RunArgs),
    /// Compare saved marginals with the best available oracle.
    Verify(VerifyArgs),
    /// Run every cell of a TOML manifest and emit CSV rows.
    Sweep(SweepArgs),
    /// Play the relaxed-scheduler game on a single-source tree.
    TreeGame(TreeGameArgs),
    /// Dump the rank of every pop of a scheduler under a random workload.
    RankTrace(RankTraceArgs),
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[command(subcommand)]
    family: Family,
    /// Model file; LDPC ground truth goes to `<out>.truth`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Subcommand)]
enum Family {
    Tree { nodes: usize },
    Ising { rows: usize, cols: usize },
    Potts { rows: usize, cols: usize },
    Ldpc {
        /// Number of parity checks; the code has twice as many bits.
        constraints: usize,
        #[arg(long, default_value_t = 0.07)]
        eps: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SchedulerArg {
    Exact,
    Mq,
    Sim,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Precision {
    F64,
    F32,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_parser = commands::parse_variant)]
    variant: relaxed_bp::engines::Variant,
    #[arg(long, value_enum, default_value_t = SchedulerArg::Exact)]
    scheduler: SchedulerArg,
    #[arg(long, default_value_t = 4)]
    mq_queues_per_worker: usize,
    /// Relaxation factor of the simulated scheduler.
    #[arg(long, default_value_t = 8)]
    sim_q: usize,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long, default_value_t = 2)]
    splash_h: usize,
    /// Defaults to 1e-2 when the model has a ground-truth sidecar, else 1e-5.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long, default_value_t = 1000)]
    check_interval: usize,
    /// Repetition `r` runs with seed `seed + r`.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Seconds per repetition.
    #[arg(long, default_value_t = 300.0)]
    time_cap: f64,
    #[arg(long, default_value_t = DEFAULT_REPS)]
    reps: usize,
    /// CSV file the per-repetition rows are appended to.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the marginals of the last repetition here.
    #[arg(long)]
    marginals: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Precision::F64)]
    precision: Precision,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    marginals: PathBuf,
}

#[derive(Debug, Args)]
struct SweepArgs {
    manifest: PathBuf,
    /// CSV file to append to; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum InstanceArg {
    /// Full binary tree with uniform-expansion residuals.
    Binary,
    /// Random tree of bounded degree with uniform-expansion residuals.
    Random,
    /// Long-path instance with side paths.
    Bad,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AdversaryArg {
    Worst,
    Best,
    Frontier,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ScheduleArg {
    /// Residual priorities, downward messages only carry residual.
    Residual,
    /// Two-phase optimal tree priorities over all messages.
    Optimal,
}

#[derive(Debug, Args)]
struct TreeGameArgs {
    #[arg(long, value_enum, default_value_t = InstanceArg::Binary)]
    instance: InstanceArg,
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    #[arg(long, default_value_t = 3)]
    max_degree: usize,
    /// Attachment rounds of the bad instance (2 or 3).
    #[arg(long, default_value_t = 2)]
    rounds: u32,
    #[arg(long)]
    q: usize,
    #[arg(long, value_enum, default_value_t = AdversaryArg::Worst)]
    adversary: AdversaryArg,
    #[arg(long, value_enum, default_value_t = ScheduleArg::Residual)]
    schedule: ScheduleArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV trace of every pop.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RankTraceArgs {
    #[arg(long, value_enum, default_value_t = SchedulerArg::Mq)]
    scheduler: SchedulerArg,
    /// Total number of Multiqueue heaps.
    #[arg(long, default_value_t = 4)]
    queues: usize,
    #[arg(long, default_value_t = 8)]
    sim_q: usize,
    #[arg(long, default_value_t = 1024)]
    keys: usize,
    #[arg(long, default_value_t = 100_000)]
    ops: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Parses `args` (program name first) and runs the command. Returns the
/// process exit code: 0 on success, 1 on usage errors, 2 on I/O or parse
/// errors. Non-convergence is a result, not an error.
pub fn run_cli<I, A>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = A>,
    A: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            if code == 0 {
                let _ = write!(out, "{text}");
            } else {
                let _ = write!(err, "{text}");
            }
            return code;
        }
    };
    let result = match cli.command {
        Command::Generate(a) => commands::generate(a, out),
        Command::Run(a) => commands::run(a, out, err),
        Command::Verify(a) => commands::verify(a, out),
        Command::Sweep(a) => sweep::sweep(&a.manifest, a.out.as_deref(), out, err),
        Command::TreeGame(a) => commands::tree_game(a, out),
        Command::RankTrace(a) => commands::rank_trace(a, out),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
