use std::cell::UnsafeCell;
use std::sync::Arc;

use parking_lot::Mutex;

use super::{MarkovRandomField, MessageId};
use crate::scalar::Real;

/// Read access to message vectors, one whole vector at a time.
pub trait MessageView<T> {
    fn with_message<R>(&self, id: MessageId, f: impl FnOnce(&[T]) -> R) -> R;
}

/// Flat, single-owner message state.
#[derive(Debug, Clone, PartialEq)]
pub struct Messages<T> {
    layout: Arc<[usize]>,
    values: Vec<T>,
}

impl<T: Real> Messages<T> {
    /// Every message set to the uniform distribution over its target domain.
    pub fn uniform(mrf: &MarkovRandomField<T>) -> Self {
        let layout = mrf.message_layout().clone();
        let mut values = Vec::with_capacity(*layout.last().unwrap_or(&0));
        for id in mrf.message_ids() {
            let d = mrf.message_len(id);
            values.extend(std::iter::repeat(T::one() / T::of(d as f64)).take(d));
        }
        Self { layout, values }
    }
}

impl<T: Copy> Messages<T> {
    pub fn len(&self) -> usize {
        self.layout.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn get(&self, id: MessageId) -> &[T] {
        &self.values[self.layout[id.0]..self.layout[id.0 + 1]]
    }

    #[inline]
    pub fn get_mut(&mut self, id: MessageId) -> &mut [T] {
        &mut self.values[self.layout[id.0]..self.layout[id.0 + 1]]
    }

    #[inline]
    pub fn set(&mut self, id: MessageId, value: &[T]) {
        self.get_mut(id).copy_from_slice(value);
    }

    pub(crate) fn layout(&self) -> &Arc<[usize]> {
        &self.layout
    }

    pub(crate) fn raw_values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }
}

impl<T: Copy> MessageView<T> for Messages<T> {
    #[inline]
    fn with_message<R>(&self, id: MessageId, f: impl FnOnce(&[T]) -> R) -> R {
        f(self.get(id))
    }
}

/// Message state shared between workers.
///
/// Each message slot is guarded by its own lock, so a reader observes either
/// the old or the new complete vector. Every slot also carries a `u64` tag
/// written together with the vector.
pub struct SharedMessages<T> {
    layout: Arc<[usize]>,
    values: Box<[UnsafeCell<T>]>,
    tags: Box<[UnsafeCell<u64>]>,
    locks: Box<[Mutex<()>]>,
}

// SAFETY: all access to `values[layout[id]..layout[id + 1]]` and `tags[id]`
// happens while holding `locks[id]`, and slot ranges are disjoint.
unsafe impl<T: Send> Sync for SharedMessages<T> {}
unsafe impl<T: Send> Send for SharedMessages<T> {}

impl<T: Copy> SharedMessages<T> {
    pub fn from_messages(messages: Messages<T>) -> Self {
        let count = messages.len();
        Self {
            layout: messages.layout,
            values: messages.values.into_iter().map(UnsafeCell::new).collect(),
            tags: (0..count).map(|_| UnsafeCell::new(0)).collect(),
            locks: (0..count).map(|_| Mutex::new(())).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.locks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locks.is_empty()
    }

    #[inline]
    fn slot(&self, id: MessageId) -> *mut T {
        // SAFETY: offset is within `values`; provenance covers the whole slice.
        unsafe { UnsafeCell::raw_get(self.values.as_ptr().add(self.layout[id.0])) }
    }

    #[inline]
    fn slot_len(&self, id: MessageId) -> usize {
        self.layout[id.0 + 1] - self.layout[id.0]
    }

    /// Replaces a whole message vector.
    pub fn write(&self, id: MessageId, value: &[T]) {
        let len = self.slot_len(id);
        assert_eq!(value.len(), len, "message length mismatch");
        let _guard = self.locks[id.0].lock();
        // SAFETY: lock held, range belongs to `id`, length checked above.
        unsafe { std::ptr::copy_nonoverlapping(value.as_ptr(), self.slot(id), len) }
    }

    /// Replaces a message vector and its tag as one unit.
    pub fn write_tagged(&self, id: MessageId, value: &[T], tag: u64) {
        let len = self.slot_len(id);
        assert_eq!(value.len(), len, "message length mismatch");
        let _guard = self.locks[id.0].lock();
        // SAFETY: as in `write`.
        unsafe {
            std::ptr::copy_nonoverlapping(value.as_ptr(), self.slot(id), len);
            *self.tags[id.0].get() = tag;
        }
    }

    /// Copies a message vector and its tag into `out`.
    pub fn read_tagged(&self, id: MessageId, out: &mut Vec<T>) -> u64 {
        let len = self.slot_len(id);
        out.clear();
        let _guard = self.locks[id.0].lock();
        // SAFETY: lock held.
        unsafe {
            out.extend_from_slice(std::slice::from_raw_parts(self.slot(id), len));
            *self.tags[id.0].get()
        }
    }

    /// Calls `f` with a message vector and its tag, read as one unit.
    pub fn with_tagged<R>(&self, id: MessageId, f: impl FnOnce(&[T], u64) -> R) -> R {
        let len = self.slot_len(id);
        let _guard = self.locks[id.0].lock();
        // SAFETY: lock held for the duration of `f`.
        unsafe { f(std::slice::from_raw_parts(self.slot(id), len), *self.tags[id.0].get()) }
    }

    pub fn tag(&self, id: MessageId) -> u64 {
        let _guard = self.locks[id.0].lock();
        // SAFETY: lock held.
        unsafe { *self.tags[id.0].get() }
    }

    pub fn read_into(&self, id: MessageId, out: &mut Vec<T>) {
        self.read_tagged(id, out);
    }

    /// Copies the whole state. Intended for quiescent points.
    pub fn snapshot(&self) -> Messages<T> {
        let mut values = Vec::with_capacity(self.values.len());
        for id in 0..self.len() {
            self.with_message(MessageId(id), |v| values.extend_from_slice(v));
        }
        Messages { layout: self.layout.clone(), values }
    }
}

impl<T: Copy> MessageView<T> for SharedMessages<T> {
    #[inline]
    fn with_message<R>(&self, id: MessageId, f: impl FnOnce(&[T]) -> R) -> R {
        let len = self.slot_len(id);
        let _guard = self.locks[id.0].lock();
        // SAFETY: lock held for the lifetime of the borrow passed to `f`.
        f(unsafe { std::slice::from_raw_parts(self.slot(id), len) })
    }
}

impl<T> std::fmt::Debug for SharedMessages<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SharedMessages").field("messages", &self.locks.len()).finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_nodes() -> MarkovRandomField<f64> {
        MarkovRandomField::new(
            vec![2, 3],
            vec![vec![1.0, 1.0], vec![1.0, 1.0, 1.0]],
            vec![(0, 1)],
            vec![vec![1.0; 6]],
        )
        .unwrap()
    }

    #[test]
    fn uniform_initialization() {
        let m = two_nodes();
        let msgs = Messages::uniform(&m);
        assert_eq!(msgs.get(MessageId(0)), &[1.0 / 3.0; 3]);
        assert_eq!(msgs.get(MessageId(1)), &[0.5, 0.5]);
    }

    #[test]
    fn shared_round_trip() {
        let m = two_nodes();
        let shared = SharedMessages::from_messages(Messages::uniform(&m));
        shared.write_tagged(MessageId(0), &[0.2, 0.3, 0.5], 9);
        let mut buf = Vec::new();
        assert_eq!(shared.read_tagged(MessageId(0), &mut buf), 9);
        assert_eq!(buf, vec![0.2, 0.3, 0.5]);
        let snap = shared.snapshot();
        assert_eq!(snap.get(MessageId(1)), &[0.5, 0.5]);
    }

    #[test]
    fn concurrent_writers_never_blend() {
        let m = two_nodes();
        let shared = SharedMessages::from_messages(Messages::uniform(&m));
        let a = [1.0, 0.0, 0.0];
        let b = [0.0, 0.5, 0.5];
        std::thread::scope(|s| {
            for k in 0..4 {
                let shared = &shared;
                s.spawn(move || {
                    for _ in 0..20_000 {
                        if k % 2 == 0 {
                            shared.write(MessageId(0), if k == 0 { &a } else { &b });
                        } else {
                            shared.with_message(MessageId(0), |v| {
                                let init = [1.0 / 3.0; 3];
                                assert!(v == a || v == b || v == init, "torn read {v:?}");
                            });
                        }
                    }
                });
            }
        });
    }
}
