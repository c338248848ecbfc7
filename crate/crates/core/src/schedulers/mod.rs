//! Task schedulers: an exact priority queue, the Multiqueue, and a
//! deterministic simulated q-relaxed scheduler.
//!
//! Throughout the crate the *largest* priority is the most urgent, so the
//! relaxed "delete-min" of the literature is `approx_delete_max` here.
//!
//! The concurrent schedulers use lazy deletion: every insert or priority
//! change bumps a per-key epoch and pushes a fresh entry, and entries whose
//! epoch no longer matches are discarded when they surface.

mod exact;
mod heap;
mod multiqueue;
mod sim;
mod trace;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::rng::SplitMix64;

pub use exact::ExactScheduler;
pub use multiqueue::MultiQueue;
pub use sim::{
    Adversary, BestLegal, Candidate, FrontierStarving, Popped, RandomLegal, SharedSim,
    SimScheduler, WorstLegal,
};
pub use trace::{measure_ranks, write_rank_trace};

/// A popped task.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Task {
    pub key: usize,
    pub priority: f64,
    pub epoch: u32,
}

/// Operations every scheduler offers to the engines. Keys are dense indices
/// below the capacity the scheduler was built with.
pub trait Scheduler: Send + Sync {
    /// Inserts `key`, replacing any live entry for it.
    fn insert(&self, key: usize, priority: f64, rng: &mut SplitMix64);

    fn change_priority(&self, key: usize, priority: f64, rng: &mut SplitMix64) {
        self.insert(key, priority, rng);
    }

    /// Removes and returns a task of (approximately) maximal priority.
    fn approx_delete_max(&self, rng: &mut SplitMix64) -> Result<Task>;

    /// Possibly stale upper view of the largest live priority;
    /// `f64::NEG_INFINITY` when nothing is queued.
    fn max_priority_estimate(&self) -> f64;

    /// Rank bound of the implementation, if it guarantees one.
    fn relaxation(&self) -> Option<usize>;
}

/// Scheduler selection for engine runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SchedulerKind {
    Exact,
    /// Multiqueue with `queues_per_worker * workers` internal heaps.
    Multiqueue { queues_per_worker: usize },
    /// Simulated q-relaxed scheduler driven by the worst-legal adversary.
    Simulated { q: usize },
}

impl SchedulerKind {
    pub fn name(&self) -> &'static str {
        match self {
            SchedulerKind::Exact => "exact",
            SchedulerKind::Multiqueue { .. } => "mq",
            SchedulerKind::Simulated { .. } => "sim",
        }
    }

    /// Builds a scheduler over keys `0..capacity` for `workers` threads.
    pub fn build(&self, capacity: usize, workers: usize) -> Box<dyn Scheduler> {
        match *self {
            SchedulerKind::Exact => Box::new(ExactScheduler::new(capacity)),
            SchedulerKind::Multiqueue { queues_per_worker } => Box::new(MultiQueue::new(
                capacity,
                (queues_per_worker * workers).max(1),
            )),
            SchedulerKind::Simulated { q } => {
                Box::new(SharedSim::new(SimScheduler::new(q, Box::new(WorstLegal))))
            }
        }
    }
}

/// True iff the (possibly stale) maximum priority is strictly below `tau`.
#[inline]
pub fn check_convergence(estimate: f64, tau: f64) -> bool {
    estimate < tau
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn convergence_boundary_is_strict() {
        assert!(check_convergence(0.0, 1e-5));
        assert!(!check_convergence(1e-5, 1e-5));
        assert!(check_convergence(f64::NEG_INFINITY, 1e-5));
    }
}
