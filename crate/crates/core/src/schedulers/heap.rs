use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::sync::atomic::{AtomicU32, Ordering as AtomicOrdering};

/// Heap entry: larger priority first, then smaller key.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Entry {
    pub priority: f64,
    pub key: u32,
    pub epoch: u32,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.priority
            .total_cmp(&other.priority)
            .then_with(|| other.key.cmp(&self.key))
    }
}

/// Per-key epoch counters shared by all heaps of one scheduler.
pub(crate) struct Epochs(Box<[AtomicU32]>);

impl Epochs {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity <= u32::MAX as usize, "key space exceeds u32");
        Self((0..capacity).map(|_| AtomicU32::new(0)).collect())
    }

    /// Starts a new generation for `key` and returns its epoch.
    #[inline]
    pub fn bump(&self, key: usize) -> u32 {
        self.0[key].fetch_add(1, AtomicOrdering::AcqRel).wrapping_add(1)
    }

    #[inline]
    pub fn is_live(&self, e: &Entry) -> bool {
        self.0[e.key as usize].load(AtomicOrdering::Acquire) == e.epoch
    }
}

/// Binary heap with lazy deletion of stale entries.
pub(crate) struct LazyHeap {
    heap: BinaryHeap<Entry>,
    compact_at: usize,
}

const MIN_COMPACT: usize = 1024;

impl LazyHeap {
    pub fn new() -> Self {
        Self { heap: BinaryHeap::new(), compact_at: MIN_COMPACT }
    }

    pub fn push(&mut self, entry: Entry, epochs: &Epochs) {
        self.heap.push(entry);
        if self.heap.len() > self.compact_at {
            self.heap.retain(|e| epochs.is_live(e));
            self.compact_at = (2 * self.heap.len()).max(MIN_COMPACT);
        }
        self.purge_top(epochs);
    }

    /// Drops stale entries sitting at the top.
    pub fn purge_top(&mut self, epochs: &Epochs) {
        while let Some(top) = self.heap.peek() {
            if epochs.is_live(top) {
                break;
            }
            self.heap.pop();
        }
    }

    pub fn pop_live(&mut self, epochs: &Epochs) -> Option<Entry> {
        self.purge_top(epochs);
        let e = self.heap.pop();
        self.purge_top(epochs);
        e
    }

    /// Top priority, assuming `purge_top` ran after the last mutation.
    pub fn top_priority(&self) -> f64 {
        self.heap.peek().map_or(f64::NEG_INFINITY, |e| e.priority)
    }
}
