use std::sync::atomic::{AtomicU64, Ordering};

use parking_lot::Mutex;

use super::heap::{Entry, Epochs, LazyHeap};
use super::{Scheduler, Task};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

/// Strict priority queue behind a single lock. Ties go to the smaller key.
pub struct ExactScheduler {
    heap: Mutex<LazyHeap>,
    epochs: Epochs,
    top: AtomicU64,
}

impl ExactScheduler {
    pub fn new(capacity: usize) -> Self {
        Self {
            heap: Mutex::new(LazyHeap::new()),
            epochs: Epochs::new(capacity),
            top: AtomicU64::new(f64::NEG_INFINITY.to_bits()),
        }
    }
}

impl Scheduler for ExactScheduler {
    fn insert(&self, key: usize, priority: f64, _rng: &mut SplitMix64) {
        debug_assert!(priority.is_finite());
        let mut heap = self.heap.lock();
        let epoch = self.epochs.bump(key);
        heap.push(Entry { priority, key: key as u32, epoch }, &self.epochs);
        self.top.store(heap.top_priority().to_bits(), Ordering::Release);
    }

    fn approx_delete_max(&self, _rng: &mut SplitMix64) -> Result<Task> {
        let mut heap = self.heap.lock();
        let e = heap.pop_live(&self.epochs).ok_or(Error::Empty)?;
        self.top.store(heap.top_priority().to_bits(), Ordering::Release);
        Ok(Task { key: e.key as usize, priority: e.priority, epoch: e.epoch })
    }

    fn max_priority_estimate(&self) -> f64 {
        f64::from_bits(self.top.load(Ordering::Acquire))
    }

    fn relaxation(&self) -> Option<usize> {
        Some(1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strict_maximum() {
        let s = ExactScheduler::new(3);
        let mut r = SplitMix64::new(0);
        s.insert(0, 3.0, &mut r);
        s.insert(1, 5.0, &mut r);
        s.insert(2, 4.0, &mut r);
        assert_eq!(s.max_priority_estimate(), 5.0);
        assert_eq!(s.approx_delete_max(&mut r).unwrap().key, 1);
        assert_eq!(s.approx_delete_max(&mut r).unwrap().key, 2);
        assert_eq!(s.approx_delete_max(&mut r).unwrap().key, 0);
        assert!(matches!(s.approx_delete_max(&mut r), Err(Error::Empty)));
        assert_eq!(s.max_priority_estimate(), f64::NEG_INFINITY);
    }

    #[test]
    fn change_priority_upserts() {
        let s = ExactScheduler::new(2);
        let mut r = SplitMix64::new(0);
        s.insert(0, 3.0, &mut r);
        s.insert(1, 4.0, &mut r);
        s.change_priority(0, 9.0, &mut r);
        let t = s.approx_delete_max(&mut r).unwrap();
        assert_eq!((t.key, t.priority), (0, 9.0));
        s.change_priority(1, 0.5, &mut r);
        assert_eq!(s.max_priority_estimate(), 0.5);
        let t = s.approx_delete_max(&mut r).unwrap();
        assert_eq!((t.key, t.priority), (1, 0.5));
        assert!(s.approx_delete_max(&mut r).is_err());
    }

    #[test]
    fn ties_break_by_smaller_key() {
        let s = ExactScheduler::new(2);
        let mut r = SplitMix64::new(0);
        s.insert(1, 1.0, &mut r);
        s.insert(0, 1.0, &mut r);
        assert_eq!(s.approx_delete_max(&mut r).unwrap().key, 0);
    }

    #[test]
    fn pops_are_non_increasing_between_mutations() {
        let s = ExactScheduler::new(500);
        let mut r = SplitMix64::new(5);
        for k in 0..500 {
            s.insert(k, r.next_f64(), &mut r);
        }
        for k in 0..200 {
            s.change_priority(k, r.next_f64(), &mut r);
        }
        let mut last = f64::INFINITY;
        while let Ok(t) = s.approx_delete_max(&mut r) {
            assert!(t.priority <= last);
            last = t.priority;
        }
    }
}
