//! Sequential game between relaxed residual BP and a q-relaxed scheduler on
//! single-source trees, plus the relaxed optimal tree schedule.
//!
//! Messages of a [`TreeInstance`] are numbered per non-root node `v`:
//! `2(v - 1)` is the downward message `parent(v) -> v` and `2(v - 1) + 1`
//! the upward message `v -> parent(v)`.

use std::io::Write;

use crate::error::{Error, Result};
use crate::mrf::{l1_normalize, l2_distance, MarkovRandomField};
use crate::rng::SplitMix64;
use crate::schedulers::{Adversary, SimScheduler};

/// Edge factor shared by every edge of a uniform-expansion tree.
pub const UNIFORM_EDGE_FACTOR: [f64; 4] = [2.0, 1.0, 1.0, 2.0];
/// Node factor of the source (root); all other nodes are uniform.
pub const SOURCE_FACTOR: [f64; 2] = [0.1, 0.9];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FactorClass {
    /// Identical, strictly positive edge factors: residuals fall with depth.
    UniformExpansion,
    /// Residual tiers chosen so the walk prefers side paths over the main path.
    PathPreferring,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TreeShape {
    FullBinary,
    /// Random recursive tree in which no node exceeds degree `max_degree`.
    RandomMaxDegree { max_degree: usize, seed: u64 },
}

/// Rooted tree (root 0, every parent index below its child) with the
/// residual each downward message carries when it enters the frontier.
#[derive(Debug, Clone)]
pub struct TreeInstance {
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    depth: Vec<usize>,
    height: usize,
    residual: Vec<f64>,
    class: FactorClass,
}

impl TreeInstance {
    /// `parents[0]` must be `None` and `parents[v] < v` for every other node.
    pub fn from_parents(
        parents: Vec<Option<usize>>,
        residual: Vec<f64>,
        class: FactorClass,
    ) -> Result<Self> {
        let n = parents.len();
        if n == 0 || parents[0].is_some() || residual.len() != n {
            return Err(Error::InvalidModel("tree needs root 0 and one residual per node".into()));
        }
        let mut children = vec![Vec::new(); n];
        let mut depth = vec![0; n];
        for v in 1..n {
            match parents[v] {
                Some(p) if p < v => {
                    children[p].push(v);
                    depth[v] = depth[p] + 1;
                }
                _ => return Err(Error::InvalidModel(format!("node {v} has no earlier parent"))),
            }
            if !(residual[v] > 0.0) {
                return Err(Error::InvalidModel(format!("node {v} has a non-positive residual")));
            }
        }
        let height = depth.iter().copied().max().unwrap_or(0);
        Ok(Self { parent: parents, children, depth, height, residual, class })
    }

    pub fn node_count(&self) -> usize {
        self.parent.len()
    }

    pub fn message_count(&self) -> usize {
        2 * (self.node_count() - 1)
    }

    pub fn parent(&self, v: usize) -> Option<usize> {
        self.parent[v]
    }

    pub fn children(&self, v: usize) -> &[usize] {
        &self.children[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.children[v].len() + usize::from(self.parent[v].is_some())
    }

    pub fn depth(&self, v: usize) -> usize {
        self.depth[v]
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn class(&self) -> FactorClass {
        self.class
    }

    /// Residual of `parent(v) -> v` once its parent message has arrived.
    pub fn down_residual(&self, v: usize) -> f64 {
        self.residual[v]
    }

    #[inline]
    pub fn down(v: usize) -> usize {
        2 * (v - 1)
    }

    #[inline]
    pub fn up(v: usize) -> usize {
        2 * (v - 1) + 1
    }

    /// `(from, to)` of a message index.
    pub fn endpoints(&self, message: usize) -> (usize, usize) {
        let v = message / 2 + 1;
        let p = self.parent[v].expect("non-root");
        if message % 2 == 0 {
            (p, v)
        } else {
            (v, p)
        }
    }

    fn message(&self, from: usize, to: usize) -> usize {
        if self.parent[to] == Some(from) {
            Self::down(to)
        } else {
            Self::up(from)
        }
    }

    fn neighbors(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        self.parent[v].into_iter().chain(self.children[v].iter().copied())
    }

    /// The pairwise model behind the uniform-expansion residuals: source
    /// factor at the root, uniform elsewhere, [`UNIFORM_EDGE_FACTOR`] on
    /// every edge `(parent, child)`.
    pub fn to_mrf(&self) -> Result<MarkovRandomField<f64>> {
        let n = self.node_count();
        let mut node_factors = vec![vec![1.0, 1.0]; n];
        node_factors[0] = SOURCE_FACTOR.to_vec();
        let edges: Vec<(usize, usize)> = (1..n).map(|v| (self.parent[v].unwrap(), v)).collect();
        let factors = vec![UNIFORM_EDGE_FACTOR.to_vec(); n - 1];
        MarkovRandomField::new(vec![2; n], node_factors, edges, factors)
    }
}

fn full_binary_parents(n: usize) -> Vec<Option<usize>> {
    (0..n).map(|v| if v == 0 { None } else { Some((v - 1) / 2) }).collect()
}

fn random_parents(n: usize, max_degree: usize, seed: u64) -> Vec<Option<usize>> {
    let mut rng = SplitMix64::new(seed);
    let mut parents = vec![None; n];
    // nodes that can still take a child
    let mut open: Vec<usize> = vec![0];
    let mut degree = vec![0usize; n];
    for v in 1..n {
        let slot = rng.below(open.len());
        let p = open[slot];
        parents[v] = Some(p);
        degree[p] += 1;
        degree[v] = 1;
        if degree[p] >= max_degree {
            open.swap_remove(slot);
        }
        if max_degree > 1 {
            open.push(v);
        }
    }
    parents
}

/// Residual a downward message at each depth would carry in the
/// uniform-expansion model; index 0 is the root's outgoing message.
fn level_residuals(levels: usize) -> Vec<f64> {
    let psi = UNIFORM_EDGE_FACTOR;
    let push = |m: [f64; 2]| -> [f64; 2] {
        let v = l1_normalize(&[m[0] * psi[0] + m[1] * psi[2], m[0] * psi[1] + m[1] * psi[3]])
            .expect("positive factors");
        [v[0], v[1]]
    };
    let mut out = Vec::with_capacity(levels);
    let mut m = push(SOURCE_FACTOR);
    for _ in 0..levels {
        out.push(l2_distance(&m, &[0.5, 0.5]));
        m = push(m);
    }
    out
}

/// Tree with identical edge factors and a single source at the root.
pub fn build_uniform_tree(shape: TreeShape, n: usize) -> Result<TreeInstance> {
    if n == 0 {
        return Err(Error::InvalidConfig("tree needs at least one node".into()));
    }
    let parents = match shape {
        TreeShape::FullBinary => full_binary_parents(n),
        TreeShape::RandomMaxDegree { max_degree, seed } => {
            if max_degree < 2 && n > 2 {
                return Err(Error::InvalidConfig("max degree below 2 cannot span a tree".into()));
            }
            random_parents(n, max_degree.max(1), seed)
        }
    };
    let mut depth = vec![0usize; n];
    for v in 1..n {
        depth[v] = depth[parents[v].unwrap()] + 1;
    }
    let levels = level_residuals(depth.iter().copied().max().unwrap_or(0));
    let residual = (0..n).map(|v| if v == 0 { 1.0 } else { levels[depth[v] - 1] }).collect();
    TreeInstance::from_parents(parents, residual, FactorClass::UniformExpansion)
}

/// Residual tiers of the long-path construction: deeper attachment rounds
/// outrank earlier ones, and single extra leaves outrank everything.
const TIER_STEP: f64 = 1.0;

/// Long-path instance: a main path of `floor(sqrt n)` nodes from the root, a
/// side path of the same length hanging off every main-path node, and one
/// extra leaf on every node still of degree two (the root included).
pub fn build_bad_instance(n: usize) -> Result<TreeInstance> {
    build_bad_instance_with_rounds(n, 2)
}

/// Generalisation with paths of `floor(n^(1/c))` nodes and `c - 1` rounds of
/// attaching a fresh path to every node of the previous round; `c` in {2, 3}.
pub fn build_bad_instance_with_rounds(n: usize, c: u32) -> Result<TreeInstance> {
    if !(2..=3).contains(&c) {
        return Err(Error::InvalidConfig("only c = 2 and c = 3 are supported".into()));
    }
    if n < 16 {
        return Err(Error::InvalidConfig("the long-path instance needs n >= 16".into()));
    }
    let mut s = (n as f64).powf(1.0 / f64::from(c)).round() as usize;
    while s.pow(c) > n {
        s -= 1;
    }
    while (s + 1).pow(c) <= n {
        s += 1;
    }
    let mut parents: Vec<Option<usize>> = vec![None];
    let mut tier: Vec<f64> = vec![0.0];
    let add = |parents: &mut Vec<Option<usize>>, tier: &mut Vec<f64>, p: usize, t: f64| {
        parents.push(Some(p));
        tier.push(t);
        parents.len() - 1
    };
    let mut round: Vec<usize> = vec![0];
    let mut prev = 0;
    for _ in 1..s {
        prev = add(&mut parents, &mut tier, prev, TIER_STEP);
        round.push(prev);
    }
    for r in 1..c {
        let mut next = Vec::with_capacity(round.len() * s);
        for &anchor in &round {
            let mut prev = anchor;
            for _ in 0..s {
                prev = add(&mut parents, &mut tier, prev, TIER_STEP * f64::from(r + 1));
                next.push(prev);
            }
        }
        round = next;
    }
    let leaf_tier = TIER_STEP * f64::from(c + 1);
    let mut degree = vec![0usize; parents.len()];
    for v in 1..parents.len() {
        degree[v] += 1;
        degree[parents[v].unwrap()] += 1;
    }
    for v in 0..degree.len() {
        if degree[v] == 2 || (v == 0 && degree[v] == 1) {
            add(&mut parents, &mut tier, v, leaf_tier);
        }
    }
    tier[0] = leaf_tier;
    TreeInstance::from_parents(parents, tier, FactorClass::PathPreferring)
}

/// One pop of the game.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Step {
    /// 1-based rank of the popped message.
    pub rank: usize,
    pub useful: bool,
    /// Frontier size after the pop.
    pub frontier: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GameTrace {
    pub useful: u64,
    pub wasted: u64,
    pub max_frontier: usize,
    pub steps: Vec<Step>,
}

impl GameTrace {
    pub fn total(&self) -> u64 {
        self.useful + self.wasted
    }

    fn record(&mut self, rank: usize, useful: bool, frontier: usize) {
        if useful {
            self.useful += 1;
        } else {
            self.wasted += 1;
        }
        self.max_frontier = self.max_frontier.max(frontier);
        self.steps.push(Step { rank, useful, frontier });
    }

    /// CSV with columns `step,rank,useful,frontier`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "step,rank,useful,frontier")?;
        for (i, s) in self.steps.iter().enumerate() {
            writeln!(out, "{},{},{},{}", i, s.rank, u8::from(s.useful), s.frontier)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Plays relaxed residual BP against `adversary` until every residual is
/// zero. Every message is a task; a pop of a message with non-zero residual
/// zeroes it and hands the residual on to the messages towards its target's
/// children.
pub fn run_tree_game<A: Adversary>(
    instance: &TreeInstance,
    q: usize,
    adversary: A,
) -> Result<GameTrace> {
    let mut sim = SimScheduler::new(q, adversary);
    let mut trace = GameTrace::default();
    if instance.node_count() == 1 {
        return Ok(trace);
    }
    for v in 1..instance.node_count() {
        let start = if instance.parent(v) == Some(0) { instance.down_residual(v) } else { 0.0 };
        sim.insert(TreeInstance::down(v), start);
        sim.insert(TreeInstance::up(v), 0.0);
    }
    let mut frontier = instance.children(0).len();
    while frontier > 0 {
        let popped = sim.delete_max()?;
        let useful = popped.priority > 0.0;
        sim.insert(popped.key, 0.0);
        if useful {
            frontier -= 1;
            let (_, v) = instance.endpoints(popped.key);
            for &c in instance.children(v) {
                sim.change_priority(TreeInstance::down(c), instance.down_residual(c));
                frontier += 1;
            }
        }
        trace.record(popped.rank, useful, frontier);
    }
    Ok(trace)
}

/// Priority rule that realises the optimal two-phase tree schedule with a
/// pending-input count and a running minimum per message.
#[derive(Debug, Clone)]
pub struct OptimalTreePriorities {
    n: usize,
    pending: Vec<u32>,
    min_input: Vec<f64>,
    done: Vec<bool>,
}

impl OptimalTreePriorities {
    pub fn new(instance: &TreeInstance) -> Self {
        let m = instance.message_count();
        let mut pending = vec![0u32; m];
        for (k, p) in pending.iter_mut().enumerate() {
            let (from, _) = instance.endpoints(k);
            *p = (instance.degree(from) - 1) as u32;
        }
        Self { n: instance.node_count(), pending, min_input: vec![f64::INFINITY; m], done: vec![false; m] }
    }

    /// Starting priority: `n` for messages leaving a leaf, else 0.
    pub fn initial(&self, message: usize) -> f64 {
        if self.pending[message] == 0 {
            self.n as f64
        } else {
            0.0
        }
    }

    pub fn is_done(&self, message: usize) -> bool {
        self.done[message]
    }

    /// Records the useful update of `message` at `priority`; returns the
    /// messages that just became ready together with their priorities.
    pub fn complete(
        &mut self,
        instance: &TreeInstance,
        message: usize,
        priority: f64,
    ) -> Vec<(usize, f64)> {
        debug_assert!(!self.done[message] && priority > 0.0);
        self.done[message] = true;
        let (k, i) = instance.endpoints(message);
        let mut ready = Vec::new();
        for j in instance.neighbors(i) {
            if j == k {
                continue;
            }
            let out = instance.message(i, j);
            self.pending[out] -= 1;
            self.min_input[out] = self.min_input[out].min(priority);
            if self.pending[out] == 0 {
                ready.push((out, self.min_input[out] - 1.0));
            }
        }
        ready
    }
}

/// Plays the optimal tree schedule against `adversary` until every message
/// has had its non-zero-priority update.
pub fn run_optimal_schedule<A: Adversary>(
    instance: &TreeInstance,
    q: usize,
    adversary: A,
) -> Result<GameTrace> {
    let mut rule = OptimalTreePriorities::new(instance);
    let mut sim = SimScheduler::new(q, adversary);
    let mut trace = GameTrace::default();
    let m = instance.message_count();
    let mut frontier = 0;
    for k in 0..m {
        let p = rule.initial(k);
        frontier += usize::from(p > 0.0);
        sim.insert(k, p);
    }
    let mut remaining = m;
    while remaining > 0 {
        let popped = sim.delete_max()?;
        let useful = popped.priority > 0.0;
        sim.insert(popped.key, 0.0);
        if useful {
            remaining -= 1;
            frontier -= 1;
            for (k, p) in rule.complete(instance, popped.key, popped.priority) {
                sim.change_priority(k, p);
                frontier += 1;
            }
        }
        trace.record(popped.rank, useful, frontier);
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mrf::{compute_message, message_residual, Messages};
    use crate::schedulers::{BestLegal, FrontierStarving, RandomLegal, WorstLegal};

    #[test]
    fn full_binary_height() {
        assert_eq!(build_uniform_tree(TreeShape::FullBinary, 7).unwrap().height(), 2);
        assert_eq!(build_uniform_tree(TreeShape::FullBinary, 10_000).unwrap().height(), 13);
    }

    #[test]
    fn single_node_game_is_empty() {
        let t = build_uniform_tree(TreeShape::FullBinary, 1).unwrap();
        let g = run_tree_game(&t, 4, WorstLegal).unwrap();
        assert_eq!(g.total(), 0);
    }

    #[test]
    fn level_residuals_match_message_updates() {
        // oracle: apply the exact schedule to the actual model and read each
        // downward message's residual just before its update
        let t = build_uniform_tree(TreeShape::RandomMaxDegree { max_degree: 4, seed: 3 }, 100)
            .unwrap();
        let mrf = t.to_mrf().unwrap();
        let mut msgs = Messages::uniform(&mrf);
        let mut order: Vec<usize> = (1..100).collect();
        order.sort_by_key(|&v| t.depth(v));
        for v in order {
            let id = mrf.message_id(t.parent(v).unwrap(), v).unwrap();
            let value = compute_message(&mrf, &msgs, id).unwrap();
            let r = message_residual(&msgs, &value, id);
            assert!((r - t.down_residual(v)).abs() < 1e-12, "node {v}");
            msgs.set(id, &value);
        }
        for v in 1..100 {
            if let Some(p) = t.parent(v).filter(|&p| p != 0) {
                assert!(t.down_residual(p) > t.down_residual(v));
            }
        }
    }

    #[test]
    fn bad_instance_shape() {
        let t = build_bad_instance(16).unwrap();
        let s = 4;
        // main path + side paths + leaves on the root, the path end and every
        // side node except the last of each side path
        assert_eq!(t.node_count(), s + s * s + 1 + 1 + s * (s - 1));
        assert!(t.height() <= 2 * s + 2);
        for v in 0..t.node_count() {
            let d = t.degree(v);
            assert!(d == 1 || d == 3, "node {v} has degree {d}");
        }
        let t = build_bad_instance(10_000).unwrap();
        assert!(t.height() <= 2 * 100 + 2);
        assert!(build_bad_instance(15).is_err());
        let t3 = build_bad_instance_with_rounds(1000, 3).unwrap();
        assert!(t3.height() <= 3 * 10 + 2);
        for v in 0..t3.node_count() {
            assert!(matches!(t3.degree(v), 1 | 3));
        }
    }

    #[test]
    fn exact_scheduler_wastes_nothing() {
        for t in [
            build_uniform_tree(TreeShape::FullBinary, 500).unwrap(),
            build_bad_instance(400).unwrap(),
        ] {
            let g = run_tree_game(&t, 1, WorstLegal).unwrap();
            assert_eq!((g.useful, g.wasted), (t.node_count() as u64 - 1, 0));
        }
    }

    #[test]
    fn trace_invariants_hold_for_any_adversary() {
        let t = build_uniform_tree(TreeShape::RandomMaxDegree { max_degree: 3, seed: 9 }, 2000)
            .unwrap();
        let q = 8;
        let traces = [
            run_tree_game(&t, q, WorstLegal).unwrap(),
            run_tree_game(&t, q, FrontierStarving).unwrap(),
            run_tree_game(&t, q, RandomLegal(SplitMix64::new(1))).unwrap(),
            run_tree_game(&t, q, BestLegal).unwrap(),
        ];
        for g in traces {
            assert_eq!(g.useful, 1999);
            let mut before = t.children(0).len();
            let mut idle = 0;
            for s in &g.steps {
                assert!(s.rank <= q);
                if before >= q {
                    assert!(s.useful);
                }
                idle = if s.useful { 0 } else { idle + 1 };
                assert!(idle <= q - 1);
                before = s.frontier;
            }
        }
    }

    #[test]
    fn optimal_schedule_exact_updates_each_message_once() {
        for seed in 0..5 {
            let t = build_uniform_tree(TreeShape::RandomMaxDegree { max_degree: 5, seed }, 300)
                .unwrap();
            let g = run_optimal_schedule(&t, 1, WorstLegal).unwrap();
            assert_eq!((g.useful, g.wasted), (598, 0));
        }
    }

    #[test]
    fn optimal_rule_leaf_priority_and_ordering() {
        let t = build_uniform_tree(TreeShape::FullBinary, 7).unwrap();
        let rule = OptimalTreePriorities::new(&t);
        // leaves 3..7 send upward at priority n
        for v in 3..7 {
            assert_eq!(rule.initial(TreeInstance::up(v)), 7.0);
            assert_eq!(rule.initial(TreeInstance::down(v)), 0.0);
        }
        assert_eq!(rule.initial(TreeInstance::up(1)), 0.0);
    }

    #[test]
    fn trace_csv_header() {
        let t = build_uniform_tree(TreeShape::FullBinary, 3).unwrap();
        let g = run_tree_game(&t, 1, WorstLegal).unwrap();
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next(), Some("step,rank,useful,frontier"));
        assert_eq!(text.lines().count(), 3);
    }
}
