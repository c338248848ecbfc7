//! Deterministic q-relaxed scheduler whose choices are made by an adversary.
//!
//! Each pop may return any of the `q` highest-ranked tasks (rank order is
//! priority descending, then key ascending). A task starts a fairness counter
//! the moment it becomes the global maximum; each pop that returns a
//! lower-ranked task is an inversion against it, and once a counter reaches
//! `q - 1` the task is returned by the next pop that can legally do so. A
//! task that becomes the maximum is therefore returned within `q` pops.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};

use parking_lot::Mutex;

use super::{Scheduler, Task};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

/// A task inside the legal window, as shown to the adversary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub key: usize,
    pub priority: f64,
    /// Fairness counter, if the task has been the global maximum.
    pub inversions: Option<u32>,
}

/// Policy choosing which legal task a pop returns.
pub trait Adversary: Send {
    /// Returns an index into `window`, which is sorted best first.
    fn choose(&mut self, window: &[Candidate]) -> usize;
}

impl<A: Adversary + ?Sized> Adversary for Box<A> {
    fn choose(&mut self, window: &[Candidate]) -> usize {
        (**self).choose(window)
    }
}

/// Always the lowest-ranked legal task.
#[derive(Debug, Clone, Copy, Default)]
pub struct WorstLegal;

impl Adversary for WorstLegal {
    fn choose(&mut self, window: &[Candidate]) -> usize {
        window.len() - 1
    }
}

/// Always the top task; turns the simulator into an exact scheduler.
#[derive(Debug, Clone, Copy, Default)]
pub struct BestLegal;

impl Adversary for BestLegal {
    fn choose(&mut self, _window: &[Candidate]) -> usize {
        0
    }
}

/// The lowest-ranked zero-priority task if one is legal, else the worst
/// legal task. Keeps the set of non-zero tasks as small as fairness allows.
#[derive(Debug, Clone, Copy, Default)]
pub struct FrontierStarving;

impl Adversary for FrontierStarving {
    fn choose(&mut self, window: &[Candidate]) -> usize {
        window
            .iter()
            .rposition(|c| c.priority == 0.0)
            .unwrap_or(window.len() - 1)
    }
}

/// Uniformly random legal task from a seeded stream.
#[derive(Debug, Clone)]
pub struct RandomLegal(pub SplitMix64);

impl Adversary for RandomLegal {
    fn choose(&mut self, window: &[Candidate]) -> usize {
        self.0.below(window.len())
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Rank {
    pub priority: f64,
    pub key: usize,
}

impl PartialEq for Rank {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Rank {}

impl PartialOrd for Rank {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Rank {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .priority
            .total_cmp(&self.priority)
            .then_with(|| self.key.cmp(&other.key))
    }
}

/// Result of one simulated pop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Popped {
    pub key: usize,
    pub priority: f64,
    /// 1-based rank of the returned task at pop time.
    pub rank: usize,
    /// True when fairness, not the adversary, decided the pop.
    pub forced: bool,
}

pub struct SimScheduler<A> {
    q: usize,
    adversary: A,
    order: BTreeSet<Rank>,
    priorities: HashMap<usize, f64>,
    counters: HashMap<usize, u32>,
}

impl<A: Adversary> SimScheduler<A> {
    pub fn new(q: usize, adversary: A) -> Self {
        assert!(q >= 1, "relaxation factor must be at least 1");
        Self {
            q,
            adversary,
            order: BTreeSet::new(),
            priorities: HashMap::new(),
            counters: HashMap::new(),
        }
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn priority_of(&self, key: usize) -> Option<f64> {
        self.priorities.get(&key).copied()
    }

    pub fn max_priority(&self) -> Option<f64> {
        self.order.first().map(|r| r.priority)
    }

    /// Inserts `key` or changes its priority. A changed task is a new
    /// element: its fairness counter is dropped.
    pub fn insert(&mut self, key: usize, priority: f64) {
        debug_assert!(priority.is_finite());
        if let Some(old) = self.priorities.insert(key, priority) {
            self.order.remove(&Rank { priority: old, key });
            self.counters.remove(&key);
        }
        self.order.insert(Rank { priority, key });
        self.note_maximum();
    }

    pub fn change_priority(&mut self, key: usize, priority: f64) {
        self.insert(key, priority);
    }

    fn note_maximum(&mut self) {
        if let Some(top) = self.order.first() {
            self.counters.entry(top.key).or_insert(0);
        }
    }

    /// The legal window: the `q` highest-ranked tasks, best first.
    pub fn window(&self) -> Vec<Candidate> {
        self.order
            .iter()
            .take(self.q)
            .map(|r| Candidate {
                key: r.key,
                priority: r.priority,
                inversions: self.counters.get(&r.key).copied(),
            })
            .collect()
    }

    pub fn delete_max(&mut self) -> Result<Popped> {
        if self.order.is_empty() {
            return Err(Error::Empty);
        }
        let window = self.window();
        let limit = (self.q - 1) as u32;
        let forced = window
            .iter()
            .position(|c| c.inversions.is_some_and(|n| n >= limit));
        let index = match forced {
            Some(i) => i,
            None => {
                let i = self.adversary.choose(&window);
                if i >= window.len() {
                    return Err(Error::IllegalAdversaryChoice { index: i, window: window.len() });
                }
                i
            }
        };
        let chosen = window[index];
        self.order.remove(&Rank { priority: chosen.priority, key: chosen.key });
        self.priorities.remove(&chosen.key);
        self.counters.remove(&chosen.key);
        for c in &window[..index] {
            if let Some(n) = self.counters.get_mut(&c.key) {
                *n += 1;
            }
        }
        self.note_maximum();
        Ok(Popped {
            key: chosen.key,
            priority: chosen.priority,
            rank: index + 1,
            forced: forced.is_some(),
        })
    }

    /// Live fairness counters as `(key, inversions)`.
    pub fn fairness_counters(&self) -> impl Iterator<Item = (usize, u32)> + '_ {
        self.counters.iter().map(|(&k, &n)| (k, n))
    }

    pub fn max_counter(&self) -> u32 {
        self.counters.values().copied().max().unwrap_or(0)
    }
}

/// Thread-safe wrapper so the simulator can drive an engine. Intended for
/// single-worker runs; the lock only makes the type shareable.
pub struct SharedSim {
    inner: Mutex<SimScheduler<Box<dyn Adversary>>>,
}

impl SharedSim {
    pub fn new(sim: SimScheduler<Box<dyn Adversary>>) -> Self {
        Self { inner: Mutex::new(sim) }
    }
}

impl Scheduler for SharedSim {
    fn insert(&self, key: usize, priority: f64, _rng: &mut SplitMix64) {
        self.inner.lock().insert(key, priority);
    }

    fn approx_delete_max(&self, _rng: &mut SplitMix64) -> Result<Task> {
        let p = self.inner.lock().delete_max()?;
        Ok(Task { key: p.key, priority: p.priority, epoch: 0 })
    }

    fn max_priority_estimate(&self) -> f64 {
        self.inner.lock().max_priority().unwrap_or(f64::NEG_INFINITY)
    }

    fn relaxation(&self) -> Option<usize> {
        Some(self.inner.lock().q())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn q_one_is_exact() {
        let mut s = SimScheduler::new(1, WorstLegal);
        for (k, p) in [(0, 3.0), (1, 5.0), (2, 4.0), (3, 5.0)] {
            s.insert(k, p);
        }
        let keys: Vec<usize> = (0..4).map(|_| s.delete_max().unwrap().key).collect();
        assert_eq!(keys, vec![1, 3, 2, 0]);
        assert!(matches!(s.delete_max(), Err(Error::Empty)));
    }

    #[test]
    fn worst_legal_takes_qth_best() {
        let mut s = SimScheduler::new(4, WorstLegal);
        for (k, p) in [(9, 9.0), (8, 8.0), (7, 7.0), (6, 6.0), (5, 5.0)] {
            s.insert(k, p);
        }
        let p = s.delete_max().unwrap();
        assert_eq!((p.key, p.rank, p.forced), (6, 4, false));
    }

    #[test]
    fn maximum_is_returned_within_q_pops() {
        let q = 5;
        let mut s = SimScheduler::new(q, WorstLegal);
        for k in 0..100 {
            s.insert(k, 0.0);
        }
        s.insert(500, 1.0);
        let mut pops = 0;
        loop {
            pops += 1;
            if s.delete_max().unwrap().key == 500 {
                break;
            }
        }
        assert_eq!(pops, q);
    }

    #[test]
    fn illegal_choice_is_reported() {
        struct Broken;
        impl Adversary for Broken {
            fn choose(&mut self, window: &[Candidate]) -> usize {
                window.len()
            }
        }
        let mut s = SimScheduler::new(3, Broken);
        for k in 0..5 {
            s.insert(k, k as f64);
        }
        assert!(matches!(
            s.delete_max(),
            Err(Error::IllegalAdversaryChoice { index: 3, window: 3 })
        ));
    }

    #[test]
    fn frontier_starving_prefers_zero_tasks() {
        let mut s = SimScheduler::new(4, FrontierStarving);
        s.insert(0, 2.0);
        s.insert(1, 1.0);
        s.insert(2, 0.0);
        s.insert(3, 0.0);
        s.insert(4, 0.0);
        // window: 0, 1, 2, 3 -> last zero task is key 3
        assert_eq!(s.delete_max().unwrap().key, 3);
    }

    #[test]
    fn change_priority_resets_counter() {
        let mut s = SimScheduler::new(3, WorstLegal);
        s.insert(0, 5.0);
        for k in 1..10 {
            s.insert(k, 0.0);
        }
        s.delete_max().unwrap();
        assert_eq!(s.max_counter(), 1);
        s.change_priority(0, 6.0);
        assert_eq!(s.fairness_counters().find(|c| c.0 == 0), Some((0, 0)));
    }

    #[test]
    fn randomized_contract() {
        let mut s = SimScheduler::new(6, RandomLegal(SplitMix64::new(4)));
        let mut r = SplitMix64::new(8);
        for _ in 0..50_000 {
            if r.below(2) == 0 {
                s.insert(r.below(300), (r.below(50) as f64) / 7.0);
            } else if let Ok(p) = s.delete_max() {
                assert!(p.rank <= 6);
            }
            assert!(s.max_counter() <= 6);
        }
    }
}
