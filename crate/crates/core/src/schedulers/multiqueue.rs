use std::sync::atomic::{AtomicU64, Ordering};

use crossbeam_utils::CachePadded;
use parking_lot::Mutex;

use super::heap::{Entry, Epochs, LazyHeap};
use super::{Scheduler, Task};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

struct Shard {
    heap: Mutex<LazyHeap>,
    top: AtomicU64,
}

impl Shard {
    #[inline]
    fn cached_top(&self) -> f64 {
        f64::from_bits(self.top.load(Ordering::Acquire))
    }

    #[inline]
    fn publish_top(&self, heap: &LazyHeap) {
        self.top.store(heap.top_priority().to_bits(), Ordering::Release);
    }
}

/// `m` lock-protected binary heaps. Inserts go to one uniformly random heap;
/// deletes compare the tops of two uniformly random heaps and pop the better.
///
/// With `choices == 1` deletes sample a single heap, which is the naive
/// random-queue scheme that offers no rank guarantee.
pub struct MultiQueue {
    shards: Box<[CachePadded<Shard>]>,
    epochs: Epochs,
    choices: usize,
}

/// Failed `try_lock` attempts before an insert blocks.
const INSERT_SPINS: usize = 8;

impl MultiQueue {
    pub fn new(capacity: usize, queues: usize) -> Self {
        Self::with_choices(capacity, queues, 2)
    }

    /// Single-sample variant used by random splash.
    pub fn random_queues(capacity: usize, queues: usize) -> Self {
        Self::with_choices(capacity, queues, 1)
    }

    fn with_choices(capacity: usize, queues: usize, choices: usize) -> Self {
        assert!(queues >= 1, "a Multiqueue needs at least one queue");
        let shards = (0..queues)
            .map(|_| {
                CachePadded::new(Shard {
                    heap: Mutex::new(LazyHeap::new()),
                    top: AtomicU64::new(f64::NEG_INFINITY.to_bits()),
                })
            })
            .collect();
        Self { shards, epochs: Epochs::new(capacity), choices }
    }

    pub fn queue_count(&self) -> usize {
        self.shards.len()
    }

    fn pop_from(&self, i: usize) -> Option<Entry> {
        let shard = &self.shards[i];
        let mut heap = shard.heap.try_lock()?;
        let e = heap.pop_live(&self.epochs);
        shard.publish_top(&heap);
        e
    }

    /// Locks every queue in turn and pops from the one with the best top.
    fn pop_by_scan(&self) -> Option<Entry> {
        loop {
            let mut best: Option<(usize, f64)> = None;
            for (i, shard) in self.shards.iter().enumerate() {
                let mut heap = shard.heap.lock();
                heap.purge_top(&self.epochs);
                shard.publish_top(&heap);
                let t = heap.top_priority();
                if t > f64::NEG_INFINITY && best.map_or(true, |(_, b)| t > b) {
                    best = Some((i, t));
                }
            }
            let (i, _) = best?;
            let shard = &self.shards[i];
            let mut heap = shard.heap.lock();
            let e = heap.pop_live(&self.epochs);
            shard.publish_top(&heap);
            if e.is_some() {
                return e;
            }
        }
    }
}

impl Scheduler for MultiQueue {
    fn insert(&self, key: usize, priority: f64, rng: &mut SplitMix64) {
        debug_assert!(priority.is_finite());
        let epoch = self.epochs.bump(key);
        let entry = Entry { priority, key: key as u32, epoch };
        let m = self.shards.len();
        for _ in 0..INSERT_SPINS {
            let shard = &self.shards[rng.below(m)];
            if let Some(mut heap) = shard.heap.try_lock() {
                heap.push(entry, &self.epochs);
                shard.publish_top(&heap);
                return;
            }
        }
        let shard = &self.shards[rng.below(m)];
        let mut heap = shard.heap.lock();
        heap.push(entry, &self.epochs);
        shard.publish_top(&heap);
    }

    fn approx_delete_max(&self, rng: &mut SplitMix64) -> Result<Task> {
        let m = self.shards.len();
        let attempts = (m * m).max(4);
        let mut tries = 0;
        while tries < attempts {
            let i = rng.below(m);
            let j = if self.choices >= 2 { rng.below(m) } else { i };
            let (ti, tj) = (self.shards[i].cached_top(), self.shards[j].cached_top());
            if ti == f64::NEG_INFINITY && tj == f64::NEG_INFINITY {
                tries += 1;
                continue;
            }
            let pick = if tj > ti { j } else { i };
            match self.pop_from(pick) {
                Some(e) => {
                    return Ok(Task { key: e.key as usize, priority: e.priority, epoch: e.epoch })
                }
                None => tries += 1,
            }
        }
        self.pop_by_scan()
            .map(|e| Task { key: e.key as usize, priority: e.priority, epoch: e.epoch })
            .ok_or(Error::Empty)
    }

    fn max_priority_estimate(&self) -> f64 {
        self.shards
            .iter()
            .map(|s| s.cached_top())
            .fold(f64::NEG_INFINITY, f64::max)
    }

    fn relaxation(&self) -> Option<usize> {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedulers::ExactScheduler;

    #[test]
    fn single_queue_matches_exact() {
        let mq = MultiQueue::new(100, 1);
        let ex = ExactScheduler::new(100);
        let mut r1 = SplitMix64::new(1);
        let mut r2 = SplitMix64::new(2);
        let mut script = SplitMix64::new(3);
        for _ in 0..5000 {
            if script.below(3) < 2 {
                let k = script.below(100);
                let p = (script.below(20) as f64) / 4.0;
                mq.insert(k, p, &mut r1);
                ex.insert(k, p, &mut r2);
            } else {
                let a = mq.approx_delete_max(&mut r1).map(|t| (t.key, t.priority)).ok();
                let b = ex.approx_delete_max(&mut r2).map(|t| (t.key, t.priority)).ok();
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn empty_only_when_all_queues_empty() {
        let mq = MultiQueue::new(10, 16);
        let mut r = SplitMix64::new(0);
        assert!(matches!(mq.approx_delete_max(&mut r), Err(Error::Empty)));
        mq.insert(7, 1.0, &mut r);
        // one non-empty queue out of 16 is still found
        assert_eq!(mq.approx_delete_max(&mut r).unwrap().key, 7);
        assert!(mq.approx_delete_max(&mut r).is_err());
    }

    #[test]
    fn popped_task_was_a_local_maximum() {
        let mq = MultiQueue::new(1000, 8);
        let mut r = SplitMix64::new(9);
        for k in 0..1000 {
            mq.insert(k, r.next_f64(), &mut r);
        }
        for _ in 0..1000 {
            let tops: Vec<f64> = mq.shards.iter().map(|s| s.cached_top()).collect();
            let t = mq.approx_delete_max(&mut r).unwrap();
            assert!(tops.contains(&t.priority));
        }
    }

    #[test]
    fn stale_entries_are_skipped() {
        let mq = MultiQueue::new(4, 4);
        let mut r = SplitMix64::new(0);
        mq.insert(0, 10.0, &mut r);
        mq.change_priority(0, 1.0, &mut r);
        mq.insert(1, 2.0, &mut r);
        let mut seen = Vec::new();
        while let Ok(t) = mq.approx_delete_max(&mut r) {
            seen.push((t.key, t.priority));
        }
        seen.sort_by_key(|s| s.0);
        assert_eq!(seen, vec![(0, 1.0), (1, 2.0)]);
    }

    #[test]
    fn concurrent_use_loses_nothing() {
        let mq = MultiQueue::new(4000, 8);
        std::thread::scope(|s| {
            for w in 0..4 {
                let mq = &mq;
                s.spawn(move || {
                    let mut r = SplitMix64::fork(1, w);
                    for k in (w as usize * 1000)..(w as usize + 1) * 1000 {
                        mq.insert(k, r.next_f64(), &mut r);
                    }
                });
            }
        });
        let mut r = SplitMix64::new(0);
        let mut n = 0;
        while mq.approx_delete_max(&mut r).is_ok() {
            n += 1;
        }
        assert_eq!(n, 4000);
    }
}
