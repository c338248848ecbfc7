//! Belief-propagation engines: synchronous rounds, priority-driven message
//! updates (residual, weight decay, no-lookahead), splash variants and the
//! bucket strategy.

mod bucket;
mod counters;
mod priority;
mod splash;
mod synchronous;
mod verify;

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mrf::{estimate_marginals, MarkovRandomField, MessageView};
use crate::scalar::Real;
use crate::schedulers::SchedulerKind;

pub use bucket::{bucket_size, run_bucket, sender_residual};
pub use counters::{weight_decay_priority, UpdateCounters};
pub use priority::{run_priority_engine, run_priority_engine_with};
pub use splash::{run_splash_engine, run_splash_engine_with, splash, SplashKind, SplashScratch};
pub use synchronous::run_synchronous;
pub use verify::{full_scan, ScanReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Synchronous,
    Residual,
    WeightDecay,
    NoLookahead,
    Splash,
    SmartSplash,
    RandomSplash,
    Bucket,
}

impl Variant {
    pub const ALL: [Variant; 8] = [
        Variant::Synchronous,
        Variant::Residual,
        Variant::WeightDecay,
        Variant::NoLookahead,
        Variant::Splash,
        Variant::SmartSplash,
        Variant::RandomSplash,
        Variant::Bucket,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Synchronous => "synchronous",
            Variant::Residual => "residual",
            Variant::WeightDecay => "weight_decay",
            Variant::NoLookahead => "no_lookahead",
            Variant::Splash => "splash",
            Variant::SmartSplash => "smart_splash",
            Variant::RandomSplash => "random_splash",
            Variant::Bucket => "bucket",
        }
    }

    pub fn is_splash(self) -> bool {
        matches!(self, Variant::Splash | Variant::SmartSplash | Variant::RandomSplash)
    }

    /// Whether the variant pulls work from a configurable scheduler.
    pub fn uses_scheduler(self) -> bool {
        !matches!(self, Variant::Synchronous | Variant::Bucket | Variant::RandomSplash)
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown variant `{s}`")))
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub variant: Variant,
    pub scheduler: SchedulerKind,
    pub workers: usize,
    pub splash_h: usize,
    pub threshold: f64,
    /// Updates between convergence checks, shared across workers.
    pub check_interval: usize,
    pub time_cap_s: f64,
    pub seed: u64,
    /// Keep marginals even when the run does not converge.
    #[serde(default)]
    pub snapshot_marginals: bool,
}

impl EngineConfig {
    pub fn new(variant: Variant) -> Self {
        Self {
            variant,
            scheduler: SchedulerKind::Exact,
            workers: 1,
            splash_h: 2,
            threshold: 1e-5,
            check_interval: 1000,
            time_cap_s: 300.0,
            seed: 0,
            snapshot_marginals: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.workers == 0 {
            return bad("at least one worker is required");
        }
        if self.variant.is_splash() && self.splash_h == 0 {
            return bad("splash depth must be at least 1");
        }
        if !(self.threshold > 0.0 && self.threshold.is_finite()) {
            return bad("threshold must be positive and finite");
        }
        if self.check_interval == 0 {
            return bad("check interval must be positive");
        }
        if !(self.time_cap_s > 0.0) {
            return bad("time cap must be positive");
        }
        match self.scheduler {
            SchedulerKind::Multiqueue { queues_per_worker: 0 } => {
                return bad("a Multiqueue needs at least one queue per worker")
            }
            SchedulerKind::Simulated { q } if q == 0 => {
                return bad("relaxation factor must be at least 1")
            }
            SchedulerKind::Simulated { .. }
                if self.workers > 1 && self.variant.uses_scheduler() =>
            {
                return bad("the simulated scheduler runs with a single worker only")
            }
            _ => {}
        }
        Ok(())
    }

    pub(crate) fn deadline(&self, start: Instant) -> Instant {
        start + Duration::from_secs_f64(self.time_cap_s.min(1e9))
    }

    /// Local updates a worker performs between checks.
    pub(crate) fn local_check_interval(&self) -> usize {
        (self.check_interval / self.workers).max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: EngineConfig,
    pub converged: bool,
    pub wall_time_s: f64,
    /// Applied message updates.
    pub total_updates: u64,
    /// Applied updates that changed their message by at least the threshold.
    pub useful_updates: Option<u64>,
    /// Applied updates that changed their message by less than the threshold.
    pub wasted_updates: Option<u64>,
    /// Round count for the round-based variants.
    pub rounds: Option<u64>,
    pub per_worker_updates: Vec<u64>,
    #[serde(skip)]
    pub marginals: Option<Vec<Vec<f64>>>,
}

/// Runs the variant selected by `config`.
pub fn run<T: Real>(mrf: &MarkovRandomField<T>, config: &EngineConfig) -> Result<RunReport> {
    config.validate()?;
    match config.variant {
        Variant::Synchronous => run_synchronous(mrf, config),
        Variant::Residual | Variant::WeightDecay | Variant::NoLookahead => {
            run_priority_engine(mrf, config)
        }
        Variant::Splash | Variant::SmartSplash | Variant::RandomSplash => {
            run_splash_engine(mrf, config)
        }
        Variant::Bucket => run_bucket(mrf, config),
    }
}

pub(crate) fn marginals_f64<T: Real, V: MessageView<T> + ?Sized>(
    mrf: &MarkovRandomField<T>,
    view: &V,
) -> Result<Vec<Vec<f64>>> {
    Ok(estimate_marginals(mrf, view)?
        .into_iter()
        .map(|b| b.into_iter().map(Real::as_f64).collect())
        .collect())
}

/// Fields shared by every engine's report.
pub(crate) struct Outcome {
    pub converged: bool,
    pub per_worker: Vec<u64>,
    pub useful: Option<u64>,
    pub rounds: Option<u64>,
}

pub(crate) fn finish<T: Real, V: MessageView<T> + ?Sized>(
    mrf: &MarkovRandomField<T>,
    view: &V,
    config: &EngineConfig,
    start: Instant,
    outcome: Outcome,
) -> Result<RunReport> {
    let wall_time_s = start.elapsed().as_secs_f64();
    let total: u64 = outcome.per_worker.iter().sum();
    let marginals = if outcome.converged || config.snapshot_marginals {
        Some(marginals_f64(mrf, view)?)
    } else {
        None
    };
    Ok(RunReport {
        config: config.clone(),
        converged: outcome.converged,
        wall_time_s,
        total_updates: total,
        useful_updates: outcome.useful,
        wasted_updates: outcome.useful.map(|u| total - u),
        rounds: outcome.rounds,
        per_worker_updates: outcome.per_worker,
        marginals,
    })
}
