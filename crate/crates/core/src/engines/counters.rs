use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};

/// Weight-decay priority: the residual damped by how often the message has
/// already been updated.
#[inline]
pub fn weight_decay_priority(residual: f64, updates: u32) -> f64 {
    residual / f64::from(updates.max(1))
}

/// Per-message bookkeeping shared by the priority engine's workers: update
/// counts for weight decay and accumulated incoming change for the
/// no-lookahead priority.
pub struct UpdateCounters {
    updates: Box<[AtomicU32]>,
    accumulated: Box<[AtomicU64]>,
}

impl UpdateCounters {
    pub fn new(messages: usize) -> Self {
        Self {
            updates: (0..messages).map(|_| AtomicU32::new(0)).collect(),
            accumulated: (0..messages).map(|_| AtomicU64::new(0f64.to_bits())).collect(),
        }
    }

    /// Records one applied update and returns the new count.
    #[inline]
    pub fn record_update(&self, k: usize) -> u32 {
        self.updates[k].fetch_add(1, Ordering::Relaxed) + 1
    }

    #[inline]
    pub fn updates(&self, k: usize) -> u32 {
        self.updates[k].load(Ordering::Relaxed)
    }

    /// Adds `delta` to the accumulated change and returns the new total.
    pub fn add_change(&self, k: usize, delta: f64) -> f64 {
        let mut cur = self.accumulated[k].load(Ordering::Acquire);
        loop {
            let next = f64::from_bits(cur) + delta;
            match self.accumulated[k].compare_exchange_weak(
                cur,
                next.to_bits(),
                Ordering::AcqRel,
                Ordering::Acquire,
            ) {
                Ok(_) => return next,
                Err(seen) => cur = seen,
            }
        }
    }

    pub fn set_change(&self, k: usize, value: f64) {
        self.accumulated[k].store(value.to_bits(), Ordering::Release);
    }

    /// Resets the accumulated change to zero, returning the old total.
    pub fn take_change(&self, k: usize) -> f64 {
        f64::from_bits(self.accumulated[k].swap(0f64.to_bits(), Ordering::AcqRel))
    }

    pub fn change(&self, k: usize) -> f64 {
        f64::from_bits(self.accumulated[k].load(Ordering::Acquire))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weight_decay_examples() {
        assert!((weight_decay_priority(0.6, 3) - 0.2).abs() < 1e-15);
        assert_eq!(weight_decay_priority(0.6, 0), 0.6);
        assert_eq!(weight_decay_priority(0.6, 1), 0.6);
    }

    #[test]
    fn counts_and_accumulation() {
        let c = UpdateCounters::new(2);
        assert_eq!(c.record_update(1), 1);
        assert_eq!(c.record_update(1), 2);
        assert_eq!(c.updates(0), 0);
        c.add_change(0, 0.25);
        assert_eq!(c.add_change(0, 0.5), 0.75);
        assert_eq!(c.take_change(0), 0.75);
        assert_eq!(c.change(0), 0.0);
    }
}
