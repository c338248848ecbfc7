//! Message-level priority scheduling: residual, weight decay and
//! no-lookahead.
//!
//! Each directed message is one task. Workers pop tasks, apply the update
//! and push refreshed priorities for the messages that read the updated one.
//! The residual variants keep the would-be update of every message in a
//! lookahead cache, stamped with the versions of the inputs it was computed
//! from; a popped task whose stamp is out of date is recomputed first.

use std::cell::Cell;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::time::Instant;

use parking_lot::{Mutex, RwLock};

use super::counters::{weight_decay_priority, UpdateCounters};
use super::verify::full_scan;
use super::{finish, EngineConfig, Outcome, RunReport, Variant};
use crate::error::{Error, Result};
use crate::mrf::{
    compute_message_into, l2_distance, MarkovRandomField, MessageId, MessageScratch, MessageView,
    Messages, SharedMessages,
};
use crate::rng::SplitMix64;
use crate::scalar::Real;
use crate::schedulers::{check_convergence, Scheduler};

/// Tasks a worker handles per acquisition of the verification gate.
const BATCH: usize = 64;

/// Runs residual, weight-decay or no-lookahead BP with the scheduler named in
/// `config`.
pub fn run_priority_engine<T: Real>(
    mrf: &MarkovRandomField<T>,
    config: &EngineConfig,
) -> Result<RunReport> {
    config.validate()?;
    let scheduler = config.scheduler.build(mrf.message_count(), config.workers);
    run_priority_engine_with(mrf, config, scheduler.as_ref())
}

/// As [`run_priority_engine`], with a caller-supplied (empty) scheduler.
pub fn run_priority_engine_with<T: Real>(
    mrf: &MarkovRandomField<T>,
    config: &EngineConfig,
    scheduler: &dyn Scheduler,
) -> Result<RunReport> {
    config.validate()?;
    if !matches!(
        config.variant,
        Variant::Residual | Variant::WeightDecay | Variant::NoLookahead
    ) {
        return Err(Error::InvalidConfig(format!(
            "{} is not a message-priority variant",
            config.variant
        )));
    }
    let start = Instant::now();
    let engine = Engine::new(mrf, config, scheduler, start)?;
    engine.seed_tasks()?;
    let results: Vec<(u64, u64)> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..config.workers)
            .map(|w| {
                let engine = &engine;
                s.spawn(move || engine.work(w))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    if let Some(e) = engine.error.lock().take() {
        return Err(e);
    }
    let outcome = Outcome {
        converged: engine.converged.load(Ordering::Acquire),
        per_worker: results.iter().map(|r| r.0).collect(),
        useful: Some(results.iter().map(|r| r.1).sum()),
        rounds: None,
    };
    finish(mrf, &engine.msgs, config, start, outcome)
}

/// Message view that sums the version tags of everything it reads.
struct Stamping<'a, T> {
    msgs: &'a SharedMessages<T>,
    stamp: Cell<u64>,
}

impl<'a, T> Stamping<'a, T> {
    fn new(msgs: &'a SharedMessages<T>) -> Self {
        Self { msgs, stamp: Cell::new(0) }
    }
}

impl<T: Copy> MessageView<T> for Stamping<'_, T> {
    fn with_message<R>(&self, id: MessageId, f: impl FnOnce(&[T]) -> R) -> R {
        self.msgs.with_tagged(id, |v, tag| {
            self.stamp.set(self.stamp.get().wrapping_add(tag));
            f(v)
        })
    }
}

pub(crate) struct Worker<T> {
    scratch: MessageScratch<T>,
    buf: Vec<T>,
    old: Vec<T>,
    rng: SplitMix64,
    updates: u64,
    useful: u64,
}

pub(crate) struct Engine<'a, T> {
    mrf: &'a MarkovRandomField<T>,
    variant: Variant,
    tau: f64,
    local_check: usize,
    seed: u64,
    /// Current messages; the tag is the message's version.
    msgs: SharedMessages<T>,
    /// Lookahead values; the tag is the summed version of their inputs.
    cache: SharedMessages<T>,
    /// Last known residual (or its no-lookahead proxy) per message.
    residual: Box<[AtomicU64]>,
    counters: UpdateCounters,
    busy: Box<[AtomicBool]>,
    sched: &'a dyn Scheduler,
    /// Workers hold it shared while processing; verification takes it
    /// exclusively so that it scans a quiescent state.
    gate: RwLock<()>,
    verifying: Mutex<()>,
    pops: AtomicU64,
    next_verify_at: AtomicU64,
    backoff: u64,
    done: AtomicBool,
    converged: AtomicBool,
    error: Mutex<Option<Error>>,
    deadline: Instant,
}

impl<'a, T: Real> Engine<'a, T> {
    pub(crate) fn new(
        mrf: &'a MarkovRandomField<T>,
        config: &EngineConfig,
        sched: &'a dyn Scheduler,
        start: Instant,
    ) -> Result<Self> {
        let m = mrf.message_count();
        let msgs = Messages::uniform(mrf);
        let mut look = msgs.clone();
        let mut residual = Vec::with_capacity(m);
        let mut scratch = MessageScratch::new();
        let mut out = Vec::new();
        for id in mrf.message_ids() {
            compute_message_into(mrf, &msgs, id, &mut scratch, &mut out)?;
            residual.push(AtomicU64::new(l2_distance(&out, msgs.get(id)).as_f64().to_bits()));
            look.set(id, &out);
        }
        let counters = UpdateCounters::new(m);
        if config.variant == Variant::NoLookahead {
            for (k, r) in residual.iter().enumerate() {
                counters.set_change(k, f64::from_bits(r.load(Ordering::Relaxed)));
            }
        }
        Ok(Self {
            mrf,
            variant: config.variant,
            tau: config.threshold,
            local_check: config.local_check_interval(),
            seed: config.seed,
            msgs: SharedMessages::from_messages(msgs),
            cache: SharedMessages::from_messages(look),
            residual: residual.into_boxed_slice(),
            counters,
            busy: (0..m).map(|_| AtomicBool::new(false)).collect(),
            sched,
            gate: RwLock::new(()),
            verifying: Mutex::new(()),
            pops: AtomicU64::new(0),
            next_verify_at: AtomicU64::new(0),
            backoff: (config.check_interval as u64).max(m as u64 / 4),
            done: AtomicBool::new(false),
            converged: AtomicBool::new(false),
            error: Mutex::new(None),
            deadline: config.deadline(start),
        })
    }

    /// One task per message at its initial priority.
    pub(crate) fn seed_tasks(&self) -> Result<()> {
        let mut rng = SplitMix64::fork(self.seed, 0);
        for k in 0..self.mrf.message_count() {
            self.sched.insert(k, self.stored_residual(k), &mut rng);
        }
        Ok(())
    }

    #[inline]
    fn stored_residual(&self, k: usize) -> f64 {
        f64::from_bits(self.residual[k].load(Ordering::Acquire))
    }

    #[inline]
    fn store_residual(&self, k: usize, r: f64) {
        self.residual[k].store(r.to_bits(), Ordering::Release);
    }

    fn priority(&self, k: usize, residual: f64) -> f64 {
        match self.variant {
            Variant::WeightDecay => weight_decay_priority(residual, self.counters.updates(k)),
            _ => residual,
        }
    }

    /// Summed versions of the inputs of `k`.
    fn input_stamp(&self, k: MessageId) -> u64 {
        let (from, _) = self.mrf.endpoints(k);
        self.mrf
            .neighbors(from)
            .iter()
            .filter(|a| a.outgoing != k)
            .fold(0u64, |acc, a| acc.wrapping_add(self.msgs.tag(a.incoming)))
    }

    /// Recomputes and caches the lookahead of `k`; returns its priority.
    fn refresh(&self, k: MessageId, w: &mut Worker<T>) -> Result<f64> {
        let view = Stamping::new(&self.msgs);
        compute_message_into(self.mrf, &view, k, &mut w.scratch, &mut w.buf)?;
        let stamp = view.stamp.get();
        let r = self.msgs.with_message(k, |cur| l2_distance(&w.buf, cur)).as_f64();
        self.cache.write_tagged(k, &w.buf, stamp);
        self.store_residual(k.index(), r);
        Ok(self.priority(k.index(), r))
    }

    fn process(&self, k: MessageId, w: &mut Worker<T>) -> Result<()> {
        let (from, to) = self.mrf.endpoints(k);
        let change = if self.variant == Variant::NoLookahead {
            self.counters.take_change(k.index());
            compute_message_into(self.mrf, &self.msgs, k, &mut w.scratch, &mut w.buf)?;
            let change = self.apply(k, w);
            let own = self.counters.change(k.index());
            self.store_residual(k.index(), own);
            self.sched.insert(k.index(), own, &mut w.rng);
            for a in self.mrf.neighbors(to) {
                if a.neighbor != from {
                    let acc = self.counters.add_change(a.outgoing.index(), change);
                    self.store_residual(a.outgoing.index(), acc);
                    self.sched.insert(a.outgoing.index(), acc, &mut w.rng);
                }
            }
            change
        } else {
            let current = self.input_stamp(k);
            let stamp = if self.cache.read_tagged(k, &mut w.buf) == current {
                current
            } else {
                let view = Stamping::new(&self.msgs);
                compute_message_into(self.mrf, &view, k, &mut w.scratch, &mut w.buf)?;
                view.stamp.get()
            };
            let change = self.apply(k, w);
            self.store_residual(k.index(), 0.0);
            self.sched.insert(k.index(), 0.0, &mut w.rng);
            // an input may have moved while we worked; its writer may have
            // queued us before our reset above
            if self.input_stamp(k) != stamp {
                let p = self.refresh(k, w)?;
                self.sched.insert(k.index(), p, &mut w.rng);
            }
            for a in self.mrf.neighbors(to) {
                if a.neighbor != from {
                    let p = self.refresh(a.outgoing, w)?;
                    self.sched.insert(a.outgoing.index(), p, &mut w.rng);
                }
            }
            change
        };
        w.updates += 1;
        if change >= self.tau {
            w.useful += 1;
        }
        Ok(())
    }

    /// Writes `w.buf` as the new value of `k`; returns the L2 change.
    fn apply(&self, k: MessageId, w: &mut Worker<T>) -> f64 {
        let version = self.msgs.read_tagged(k, &mut w.old);
        self.msgs.write_tagged(k, &w.buf, version + 1);
        self.counters.record_update(k.index());
        l2_distance(&w.buf, &w.old).as_f64()
    }

    fn fail(&self, e: Error) {
        self.error.lock().get_or_insert(e);
        self.done.store(true, Ordering::Release);
    }

    fn work(&self, id: usize) -> (u64, u64) {
        let mut w = Worker {
            scratch: MessageScratch::new(),
            buf: Vec::new(),
            old: Vec::new(),
            rng: SplitMix64::fork(self.seed, id as u64 + 1),
            updates: 0,
            useful: 0,
        };
        let mut since_check = 0;
        while !self.done.load(Ordering::Acquire) {
            if Instant::now() >= self.deadline {
                self.done.store(true, Ordering::Release);
                break;
            }
            let mut check = false;
            let mut pops = 0;
            {
                let _shared = self.gate.read();
                for _ in 0..BATCH {
                    let Ok(task) = self.sched.approx_delete_max(&mut w.rng) else {
                        check = true;
                        break;
                    };
                    pops += 1;
                    if self.busy[task.key].swap(true, Ordering::Acquire) {
                        // the owner re-queues it when done
                        continue;
                    }
                    let r = self.process(MessageId(task.key), &mut w);
                    self.busy[task.key].store(false, Ordering::Release);
                    if let Err(e) = r {
                        self.fail(e);
                        break;
                    }
                    since_check += 1;
                    if since_check >= self.local_check {
                        since_check = 0;
                        check = true;
                        break;
                    }
                }
            }
            self.pops.fetch_add(pops, Ordering::Relaxed);
            if check && check_convergence(self.sched.max_priority_estimate(), self.tau) {
                if let Err(e) = self.verify(&mut w) {
                    self.fail(e);
                }
            }
        }
        (w.updates, w.useful)
    }

    /// Full scan of a quiescent state. Converged iff every residual is below
    /// the threshold; otherwise the offending messages are re-queued with
    /// fresh priorities. Returns whether the run converged.
    pub(crate) fn verify(&self, w: &mut Worker<T>) -> Result<bool> {
        let Some(_only) = self.verifying.try_lock() else {
            return Ok(false);
        };
        if self.done.load(Ordering::Acquire)
            || self.pops.load(Ordering::Relaxed) < self.next_verify_at.load(Ordering::Relaxed)
        {
            return Ok(self.converged.load(Ordering::Acquire));
        }
        let _exclusive = self.gate.write();
        let scan = full_scan(self.mrf, &self.msgs)?;
        if scan.converged(self.tau) {
            self.converged.store(true, Ordering::Release);
            self.done.store(true, Ordering::Release);
            return Ok(true);
        }
        for (k, &r) in scan.residuals.iter().enumerate() {
            if r < self.tau {
                continue;
            }
            let p = if self.variant == Variant::NoLookahead {
                self.counters.set_change(k, r);
                self.store_residual(k, r);
                r
            } else {
                self.refresh(MessageId(k), w)?
            };
            self.sched.insert(k, p, &mut w.rng);
        }
        self.next_verify_at
            .store(self.pops.load(Ordering::Relaxed) + self.backoff, Ordering::Relaxed);
        Ok(false)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{gen_ising, gen_tree};
    use crate::mrf::brute_force_marginals;
    use crate::schedulers::{SchedulerKind, SharedSim, SimScheduler, WorstLegal};

    fn config(variant: Variant) -> EngineConfig {
        let mut c = EngineConfig::new(variant);
        c.threshold = 1e-10;
        c
    }

    #[test]
    fn exact_residual_updates_each_downward_message_once() {
        let mrf = gen_tree::<f64>(1000).unwrap();
        let r = run_priority_engine(&mrf, &EngineConfig::new(Variant::Residual)).unwrap();
        assert!(r.converged);
        // popped tasks are applied even below threshold, so a stray
        // zero-change pop may precede the final verification
        assert!((999..=1000).contains(&r.total_updates), "{}", r.total_updates);
        assert_eq!(r.useful_updates, Some(999));
    }

    #[test]
    fn all_variants_match_brute_force_on_small_loopy_grid() {
        let mrf = gen_ising::<f64>(2, 2, 5).unwrap();
        // a 4-cycle: BP is not exact, but every variant reaches the same fixed point
        let reference = run_priority_engine(&mrf, &config(Variant::Residual)).unwrap();
        for v in [Variant::WeightDecay, Variant::NoLookahead] {
            let r = run_priority_engine(&mrf, &config(v)).unwrap();
            assert!(r.converged, "{v}");
            for (a, b) in r.marginals.unwrap().iter().zip(reference.marginals.as_ref().unwrap()) {
                assert!((a[0] - b[0]).abs() < 1e-8, "{v}");
            }
        }
        let exact = brute_force_marginals(&mrf).unwrap();
        let bp = reference.marginals.unwrap();
        assert!((exact[0][0] - bp[0][0]).abs() < 0.2);
    }

    #[test]
    fn multiqueue_and_threads_converge() {
        let mrf = gen_ising::<f64>(12, 12, 1).unwrap();
        let mut c = EngineConfig::new(Variant::Residual);
        c.scheduler = SchedulerKind::Multiqueue { queues_per_worker: 4 };
        c.workers = 4;
        let r = run_priority_engine(&mrf, &c).unwrap();
        assert!(r.converged);
        assert_eq!(r.total_updates, r.per_worker_updates.iter().sum::<u64>());
    }

    #[test]
    fn single_worker_exact_runs_are_deterministic() {
        let mrf = gen_ising::<f64>(8, 8, 2).unwrap();
        let c = EngineConfig::new(Variant::WeightDecay);
        let a = run_priority_engine(&mrf, &c).unwrap();
        let b = run_priority_engine(&mrf, &c).unwrap();
        assert_eq!(a.total_updates, b.total_updates);
        assert_eq!(a.marginals, b.marginals);
    }

    #[test]
    fn simulated_scheduler_drives_engine() {
        let mrf = gen_tree::<f64>(255).unwrap();
        let mut c = EngineConfig::new(Variant::Residual);
        c.scheduler = SchedulerKind::Simulated { q: 8 };
        let r = run_priority_engine(&mrf, &c).unwrap();
        assert!(r.converged);
        assert!(r.total_updates >= 254);
    }

    #[test]
    fn stale_estimate_does_not_end_the_run() {
        // Three-node chain: the root's outgoing message has a real residual,
        // but the scheduler is empty, so its estimate says "converged".
        let mrf = gen_tree::<f64>(3).unwrap();
        let root_msg = mrf.message_id(0, 1).unwrap();
        let c = EngineConfig::new(Variant::Residual);
        let sim = SharedSim::new(SimScheduler::new(2, Box::new(WorstLegal)));
        let engine = Engine::new(&mrf, &c, &sim, Instant::now()).unwrap();
        let real = engine.stored_residual(root_msg.index());
        let tau = real / 10.0;
        let mut c = c;
        c.threshold = tau;
        let engine = Engine::new(&mrf, &c, &sim, Instant::now()).unwrap();
        assert!(check_convergence(sim.max_priority_estimate(), tau));
        let mut w = Worker {
            scratch: MessageScratch::new(),
            buf: Vec::new(),
            old: Vec::new(),
            rng: SplitMix64::new(0),
            updates: 0,
            useful: 0,
        };
        assert!(!engine.verify(&mut w).unwrap());
        assert!(!engine.done.load(Ordering::Acquire));
        assert!((sim.max_priority_estimate() - 10.0 * tau).abs() < 1e-12);
    }
}
