//! Node-level scheduling by splashes.
//!
//! A task is a node whose priority is its node residual (largest residual
//! among its incoming messages). Popping a node runs a splash rooted there:
//! a breadth-first tree of depth `H` is swept leaves-to-root and then
//! root-to-leaves.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::time::Instant;

use parking_lot::{Mutex, RwLock};

use super::verify::full_scan;
use super::{finish, EngineConfig, Outcome, RunReport, Variant};
use crate::error::{Error, Result};
use crate::mrf::{
    compute_message_into, l2_distance, MarkovRandomField, MessageId, MessageScratch, MessageView,
    Messages, SharedMessages,
};
use crate::rng::SplitMix64;
use crate::scalar::Real;
use crate::schedulers::{check_convergence, MultiQueue, Scheduler};

const BATCH: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplashKind {
    /// Every outgoing message of every node in the tree, in both passes.
    Standard,
    /// Only tree edges: child-to-parent going up, parent-to-child going down.
    Smart,
}

/// Per-worker buffers for [`splash`].
pub struct SplashScratch<T> {
    mark: Vec<u32>,
    generation: u32,
    order: Vec<usize>,
    depth: Vec<usize>,
    /// Parent-to-child message for each entry of `order` (unused for root).
    down: Vec<MessageId>,
    /// Messages written by the last splash, in update order.
    pub updated: Vec<MessageId>,
    /// Updates of the last splash that moved their message by at least
    /// the `useful_at` threshold.
    pub useful: usize,
    pub useful_at: f64,
    message: MessageScratch<T>,
    out: Vec<T>,
}

impl<T> SplashScratch<T> {
    pub fn new(nodes: usize) -> Self {
        Self {
            mark: vec![0; nodes],
            generation: 0,
            order: Vec::new(),
            depth: Vec::new(),
            down: Vec::new(),
            updated: Vec::new(),
            useful: 0,
            useful_at: 0.0,
            message: MessageScratch::new(),
            out: Vec::new(),
        }
    }

    fn next_generation(&mut self) -> u32 {
        self.generation = self.generation.wrapping_add(1);
        if self.generation == 0 {
            self.mark.fill(0);
            self.generation = 1;
        }
        self.generation
    }
}

/// Runs one splash of depth `h` around `root`; returns the number of
/// message updates applied.
pub fn splash<T: Real>(
    mrf: &MarkovRandomField<T>,
    msgs: &SharedMessages<T>,
    root: usize,
    h: usize,
    kind: SplashKind,
    s: &mut SplashScratch<T>,
) -> Result<usize> {
    let g = s.next_generation();
    s.order.clear();
    s.depth.clear();
    s.down.clear();
    s.updated.clear();
    s.useful = 0;
    s.mark[root] = g;
    s.order.push(root);
    s.depth.push(0);
    s.down.push(MessageId(usize::MAX));
    let mut head = 0;
    while head < s.order.len() {
        let (v, d) = (s.order[head], s.depth[head]);
        head += 1;
        if d == h {
            continue;
        }
        for a in mrf.neighbors(v) {
            if s.mark[a.neighbor] != g {
                s.mark[a.neighbor] = g;
                s.order.push(a.neighbor);
                s.depth.push(d + 1);
                s.down.push(a.outgoing);
            }
        }
    }

    match kind {
        SplashKind::Standard => {
            for idx in (0..s.order.len()).rev() {
                for a in mrf.neighbors(s.order[idx]) {
                    update(mrf, msgs, a.outgoing, s)?;
                }
            }
            for idx in 0..s.order.len() {
                for a in mrf.neighbors(s.order[idx]) {
                    update(mrf, msgs, a.outgoing, s)?;
                }
            }
        }
        SplashKind::Smart => {
            for idx in (1..s.order.len()).rev() {
                update(mrf, msgs, s.down[idx].reverse(), s)?;
            }
            for idx in 1..s.order.len() {
                update(mrf, msgs, s.down[idx], s)?;
            }
        }
    }
    Ok(s.updated.len())
}

fn update<T: Real>(
    mrf: &MarkovRandomField<T>,
    msgs: &SharedMessages<T>,
    id: MessageId,
    s: &mut SplashScratch<T>,
) -> Result<()> {
    compute_message_into(mrf, msgs, id, &mut s.message, &mut s.out)?;
    let change = msgs.with_message(id, |cur| l2_distance(&s.out, cur)).as_f64();
    msgs.write(id, &s.out);
    if change >= s.useful_at {
        s.useful += 1;
    }
    s.updated.push(id);
    Ok(())
}

/// Runs splash, smart splash or random splash. Random splash ignores the
/// configured scheduler and uses one single-sample queue per worker.
pub fn run_splash_engine<T: Real>(
    mrf: &MarkovRandomField<T>,
    config: &EngineConfig,
) -> Result<RunReport> {
    config.validate()?;
    let n = mrf.node_count();
    let scheduler: Box<dyn Scheduler> = if config.variant == Variant::RandomSplash {
        Box::new(MultiQueue::random_queues(n, config.workers))
    } else {
        config.scheduler.build(n, config.workers)
    };
    run_splash_engine_with(mrf, config, scheduler.as_ref())
}

/// As [`run_splash_engine`], with a caller-supplied (empty) scheduler.
pub fn run_splash_engine_with<T: Real>(
    mrf: &MarkovRandomField<T>,
    config: &EngineConfig,
    scheduler: &dyn Scheduler,
) -> Result<RunReport> {
    config.validate()?;
    let kind = match config.variant {
        Variant::Splash | Variant::RandomSplash => SplashKind::Standard,
        Variant::SmartSplash => SplashKind::Smart,
        v => return Err(Error::InvalidConfig(format!("{v} is not a splash variant"))),
    };
    let start = Instant::now();
    let engine = Engine::new(mrf, config, kind, scheduler, start)?;
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

struct Worker<T> {
    splash: SplashScratch<T>,
    message: MessageScratch<T>,
    out: Vec<T>,
    touched: Vec<MessageId>,
    message_mark: Vec<u32>,
    node_mark: Vec<u32>,
    generation: u32,
    rng: SplitMix64,
    updates: u64,
    useful: u64,
}

impl<T> Worker<T> {
    fn next_generation(&mut self) -> u32 {
        self.generation = self.generation.wrapping_add(1);
        if self.generation == 0 {
            self.message_mark.fill(0);
            self.node_mark.fill(0);
            self.generation = 1;
        }
        self.generation
    }
}

struct Engine<'a, T> {
    mrf: &'a MarkovRandomField<T>,
    kind: SplashKind,
    h: usize,
    tau: f64,
    local_check: usize,
    seed: u64,
    msgs: SharedMessages<T>,
    residual: Box<[AtomicU64]>,
    busy: Box<[AtomicBool]>,
    sched: &'a dyn Scheduler,
    gate: RwLock<()>,
    verifying: Mutex<()>,
    done: AtomicBool,
    converged: AtomicBool,
    error: Mutex<Option<Error>>,
    deadline: Instant,
}

impl<'a, T: Real> Engine<'a, T> {
    fn new(
        mrf: &'a MarkovRandomField<T>,
        config: &EngineConfig,
        kind: SplashKind,
        sched: &'a dyn Scheduler,
        start: Instant,
    ) -> Result<Self> {
        let msgs = Messages::uniform(mrf);
        let scan = full_scan(mrf, &msgs)?;
        let engine = Self {
            mrf,
            kind,
            h: config.splash_h,
            tau: config.threshold,
            local_check: config.local_check_interval(),
            seed: config.seed,
            msgs: SharedMessages::from_messages(msgs),
            residual: scan.residuals.iter().map(|r| AtomicU64::new(r.to_bits())).collect(),
            busy: (0..mrf.node_count()).map(|_| AtomicBool::new(false)).collect(),
            sched,
            gate: RwLock::new(()),
            verifying: Mutex::new(()),
            done: AtomicBool::new(false),
            converged: AtomicBool::new(false),
            error: Mutex::new(None),
            deadline: config.deadline(start),
        };
        let mut rng = SplitMix64::fork(config.seed, 0);
        for v in 0..mrf.node_count() {
            sched.insert(v, engine.node_priority(v), &mut rng);
        }
        Ok(engine)
    }

    fn node_priority(&self, v: usize) -> f64 {
        self.mrf
            .neighbors(v)
            .iter()
            .map(|a| f64::from_bits(self.residual[a.incoming.index()].load(Ordering::Acquire)))
            .fold(0.0, f64::max)
    }

    fn process(&self, root: usize, w: &mut Worker<T>) -> Result<()> {
        w.splash.useful_at = self.tau;
        let count = splash(self.mrf, &self.msgs, root, self.h, self.kind, &mut w.splash)?;
        w.updates += count as u64;
        w.useful += w.splash.useful as u64;

        let g = w.next_generation();
        w.touched.clear();
        for &id in &w.splash.updated {
            if w.message_mark[id.index()] != g {
                w.message_mark[id.index()] = g;
                w.touched.push(id);
            }
            let (from, to) = self.mrf.endpoints(id);
            for a in self.mrf.neighbors(to) {
                if a.neighbor != from && w.message_mark[a.outgoing.index()] != g {
                    w.message_mark[a.outgoing.index()] = g;
                    w.touched.push(a.outgoing);
                }
            }
        }
        for &id in &w.touched {
            compute_message_into(self.mrf, &self.msgs, id, &mut w.message, &mut w.out)?;
            let r = self.msgs.with_message(id, |cur| l2_distance(&w.out, cur)).as_f64();
            self.residual[id.index()].store(r.to_bits(), Ordering::Release);
        }
        w.node_mark[root] = g;
        self.sched.insert(root, self.node_priority(root), &mut w.rng);
        for i in 0..w.touched.len() {
            let to = self.mrf.endpoints(w.touched[i]).1;
            if w.node_mark[to] != g {
                w.node_mark[to] = g;
                self.sched.insert(to, self.node_priority(to), &mut w.rng);
            }
        }
        Ok(())
    }

    fn fail(&self, e: Error) {
        self.error.lock().get_or_insert(e);
        self.done.store(true, Ordering::Release);
    }

    fn work(&self, id: usize) -> (u64, u64) {
        let n = self.mrf.node_count();
        let mut w = Worker {
            splash: SplashScratch::new(n),
            message: MessageScratch::new(),
            out: Vec::new(),
            touched: Vec::new(),
            message_mark: vec![0; self.mrf.message_count()],
            node_mark: vec![0; n],
            generation: 0,
            rng: SplitMix64::fork(self.seed, id as u64 + 1),
            updates: 0,
            useful: 0,
        };
        let mut last_check = 0u64;
        // splashes of isolated nodes update nothing, so pops also count
        let mut pops = 0u64;
        let interval = self.local_check as u64;
        while !self.done.load(Ordering::Acquire) {
            if Instant::now() >= self.deadline {
                self.done.store(true, Ordering::Release);
                break;
            }
            let mut check = false;
            {
                let _shared = self.gate.read();
                for _ in 0..BATCH {
                    let Ok(task) = self.sched.approx_delete_max(&mut w.rng) else {
                        check = true;
                        break;
                    };
                    if self.busy[task.key].swap(true, Ordering::Acquire) {
                        continue;
                    }
                    let r = self.process(task.key, &mut w);
                    self.busy[task.key].store(false, Ordering::Release);
                    if let Err(e) = r {
                        self.fail(e);
                        break;
                    }
                    pops += 1;
                    if w.updates - last_check >= interval || pops >= interval {
                        last_check = w.updates;
                        pops = 0;
                        check = true;
                        break;
                    }
                }
            }
            if check && check_convergence(self.sched.max_priority_estimate(), self.tau) {
                if let Err(e) = self.verify(&mut w.rng) {
                    self.fail(e);
                }
            }
        }
        (w.updates, w.useful)
    }

    fn verify(&self, rng: &mut SplitMix64) -> Result<()> {
        let Some(_only) = self.verifying.try_lock() else {
            return Ok(());
        };
        if self.done.load(Ordering::Acquire) {
            return Ok(());
        }
        let _exclusive = self.gate.write();
        let scan = full_scan(self.mrf, &self.msgs)?;
        for (slot, r) in self.residual.iter().zip(&scan.residuals) {
            slot.store(r.to_bits(), Ordering::Release);
        }
        if scan.converged(self.tau) {
            self.converged.store(true, Ordering::Release);
            self.done.store(true, Ordering::Release);
            return Ok(());
        }
        for v in 0..self.mrf.node_count() {
            let p = self.node_priority(v);
            if p >= self.tau {
                self.sched.insert(v, p, rng);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{gen_ising, gen_tree};
    use crate::schedulers::SchedulerKind;

    fn star(d: usize) -> MarkovRandomField<f64> {
        let edges: Vec<(usize, usize)> = (1..=d).map(|k| (0, k)).collect();
        MarkovRandomField::new(
            vec![2; d + 1],
            vec![vec![1.0, 2.0]; d + 1],
            edges,
            vec![vec![2.0, 1.0, 1.0, 2.0]; d],
        )
        .unwrap()
    }

    fn shared(mrf: &MarkovRandomField<f64>) -> SharedMessages<f64> {
        SharedMessages::from_messages(Messages::uniform(mrf))
    }

    #[test]
    fn isolated_node_splash_is_empty() {
        let mrf = MarkovRandomField::<f64>::new(vec![2], vec![vec![1.0, 1.0]], vec![], vec![])
            .unwrap();
        let mut s = SplashScratch::new(1);
        assert_eq!(splash(&mrf, &shared(&mrf), 0, 1, SplashKind::Standard, &mut s).unwrap(), 0);
    }

    #[test]
    fn edgeless_model_terminates() {
        let mrf = MarkovRandomField::<f64>::new(vec![2], vec![vec![1.0, 3.0]], vec![], vec![])
            .unwrap();
        for v in [Variant::Splash, Variant::SmartSplash, Variant::RandomSplash] {
            let mut c = EngineConfig::new(v);
            c.time_cap_s = 5.0;
            let r = run_splash_engine(&mrf, &c).unwrap();
            assert!(r.converged, "{v}");
            assert_eq!(r.total_updates, 0);
        }
    }

    #[test]
    fn smart_splash_on_star_updates_tree_edges_twice() {
        for d in 1..6 {
            let mrf = star(d);
            let mut s = SplashScratch::new(d + 1);
            let n = splash(&mrf, &shared(&mrf), 0, 1, SplashKind::Smart, &mut s).unwrap();
            assert_eq!(n, 2 * d);
        }
    }

    #[test]
    fn standard_splash_counts_on_grid_interior() {
        // centre of a 5x5 grid: four neighbours, each of degree four
        let mrf = gen_ising::<f64>(5, 5, 0).unwrap();
        let centre = 12;
        let mut s = SplashScratch::new(25);
        let n = splash(&mrf, &shared(&mrf), centre, 1, SplashKind::Standard, &mut s).unwrap();
        // per pass: 4 neighbours x 4 messages + 4 from the centre
        let per_pass: usize = mrf.neighbors(centre).iter().map(|a| mrf.degree(a.neighbor)).sum::<usize>()
            + mrf.degree(centre);
        assert_eq!(per_pass, 20);
        assert_eq!(n, 2 * per_pass);
    }

    #[test]
    fn splash_update_count_is_bounded() {
        let mrf = gen_ising::<f64>(9, 9, 4).unwrap();
        for h in 1..4 {
            for root in [0, 40, 80] {
                let mut s = SplashScratch::new(81);
                let n = splash(&mrf, &shared(&mrf), root, h, SplashKind::Standard, &mut s).unwrap();
                let within = s.order.len();
                assert!(n >= 1 && n <= 2 * within * mrf.max_degree());
            }
        }
    }

    #[test]
    fn smart_splash_propagates_down_a_tree() {
        let mrf = gen_tree::<f64>(15).unwrap();
        let msgs = shared(&mrf);
        let mut s = SplashScratch::new(15);
        splash(&mrf, &msgs, 0, 3, SplashKind::Smart, &mut s).unwrap();
        let m = crate::mrf::estimate_marginals(&mrf, &msgs).unwrap();
        for b in m {
            assert!((b[0] - 0.1).abs() < 1e-12);
        }
    }

    #[test]
    fn all_splash_variants_converge() {
        let mrf = gen_ising::<f64>(10, 10, 6).unwrap();
        for (v, sched, p) in [
            (Variant::Splash, SchedulerKind::Exact, 1),
            (Variant::SmartSplash, SchedulerKind::Exact, 1),
            (Variant::SmartSplash, SchedulerKind::Multiqueue { queues_per_worker: 4 }, 3),
            (Variant::RandomSplash, SchedulerKind::Exact, 2),
            (Variant::Splash, SchedulerKind::Simulated { q: 4 }, 1),
        ] {
            let mut c = EngineConfig::new(v);
            c.scheduler = sched;
            c.workers = p;
            let r = run_splash_engine(&mrf, &c).unwrap();
            assert!(r.converged, "{v} {sched:?}");
            assert_eq!(r.total_updates, r.per_worker_updates.iter().sum::<u64>());
        }
    }
}
