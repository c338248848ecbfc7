//! Seeded generators for the benchmark model families.
//!
//! Every generator is a pure function of its arguments. Random parameters are
//! drawn from one [`SplitMix64`] stream in a fixed order so that instances
//! can be reproduced exactly.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mrf::MarkovRandomField;
use crate::rng::SplitMix64;
use crate::scalar::Real;

/// Which family to generate, with its size parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelKind {
    Tree { nodes: usize },
    Ising { rows: usize, cols: usize },
    Potts { rows: usize, cols: usize },
    /// `constraints` parity checks over `2 * constraints` bits.
    Ldpc { constraints: usize, epsilon: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    #[serde(flatten)]
    pub kind: ModelKind,
    pub seed: u64,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        match self.kind {
            ModelKind::Tree { nodes } if nodes == 0 => bad("tree needs at least one node"),
            ModelKind::Ising { rows, cols } | ModelKind::Potts { rows, cols }
                if rows == 0 || cols == 0 =>
            {
                bad("grid dimensions must be positive")
            }
            ModelKind::Ldpc { constraints, .. } if constraints == 0 => {
                bad("ldpc needs at least one constraint")
            }
            ModelKind::Ldpc { epsilon, .. } if !(epsilon > 0.0 && epsilon < 0.5) => {
                bad("ldpc channel error must lie in (0, 0.5)")
            }
            _ => Ok(()),
        }
    }

    /// Builds the model; LDPC instances also return their ground truth.
    pub fn generate<T: Real>(&self) -> Result<(MarkovRandomField<T>, Option<LdpcGroundTruth>)> {
        self.validate()?;
        Ok(match self.kind {
            ModelKind::Tree { nodes } => (gen_tree(nodes)?, None),
            ModelKind::Ising { rows, cols } => (gen_ising(rows, cols, self.seed)?, None),
            ModelKind::Potts { rows, cols } => (gen_potts(rows, cols, self.seed)?, None),
            ModelKind::Ldpc { constraints, epsilon } => {
                let (m, t) = gen_ldpc(constraints, epsilon, self.seed)?;
                (m, Some(t))
            }
        })
    }
}

fn identity_table<T: Real>(d: usize) -> Vec<T> {
    let mut t = vec![T::zero(); d * d];
    for x in 0..d {
        t[x * d + x] = T::one();
    }
    t
}

/// Full binary tree rooted at 0 whose root pushes `(0.1, 0.9)` down
/// identity edges. Edge `k - 1` joins node `k` to its parent `(k - 1) / 2`.
pub fn gen_tree<T: Real>(n: usize) -> Result<MarkovRandomField<T>> {
    if n == 0 {
        return Err(Error::InvalidConfig("tree needs at least one node".into()));
    }
    let mut node_factors = vec![vec![T::of(0.5), T::of(0.5)]; n];
    node_factors[0] = vec![T::of(0.1), T::of(0.9)];
    let edges: Vec<(usize, usize)> = (1..n).map(|k| ((k - 1) / 2, k)).collect();
    let edge_factors = vec![identity_table(2); n - 1];
    MarkovRandomField::new(vec![2; n], node_factors, edges, edge_factors)
}

/// Grid edges in row-major node order, horizontal neighbour before vertical.
pub fn grid_edges(rows: usize, cols: usize) -> Vec<(usize, usize)> {
    let mut edges = Vec::with_capacity((2 * rows * cols).saturating_sub(rows + cols));
    for r in 0..rows {
        for c in 0..cols {
            let v = r * cols + c;
            if c + 1 < cols {
                edges.push((v, v + 1));
            }
            if r + 1 < rows {
                edges.push((v, v + cols));
            }
        }
    }
    edges
}

/// Grid model: node parameters first (node order), then edge parameters
/// (edge order), each uniform on `[-range, range]`.
fn gen_grid<T: Real>(
    rows: usize,
    cols: usize,
    seed: u64,
    range: f64,
    node_factor: impl Fn(f64) -> Vec<T>,
    edge_factor: impl Fn(f64) -> Vec<T>,
) -> Result<MarkovRandomField<T>> {
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidConfig("grid dimensions must be positive".into()));
    }
    let mut rng = SplitMix64::new(seed);
    let n = rows * cols;
    let node_factors = (0..n).map(|_| node_factor(rng.uniform(-range, range))).collect();
    let edges = grid_edges(rows, cols);
    let edge_factors = edges
        .iter()
        .map(|_| edge_factor(rng.uniform(-range, range)))
        .collect();
    MarkovRandomField::new(vec![2; n], node_factors, edges, edge_factors)
}

/// Ising grid over `{-1, +1}` (index 0 is `-1`): `psi_i(x) = e^(beta x)`,
/// `psi_ij(x, y) = e^(alpha x y)`, parameters uniform on `[-1, 1]`.
pub fn gen_ising<T: Real>(rows: usize, cols: usize, seed: u64) -> Result<MarkovRandomField<T>> {
    gen_grid(
        rows,
        cols,
        seed,
        1.0,
        |beta| vec![T::of((-beta).exp()), T::of(beta.exp())],
        |alpha| {
            let same = T::of(alpha.exp());
            let diff = T::of((-alpha).exp());
            vec![same, diff, diff, same]
        },
    )
}

/// Potts grid over `{0, 1}`: `psi_i = (1, e^beta)`, `psi_ij = e^alpha` on
/// the diagonal and 1 elsewhere, parameters uniform on `[-2.5, 2.5]`.
pub fn gen_potts<T: Real>(rows: usize, cols: usize, seed: u64) -> Result<MarkovRandomField<T>> {
    gen_grid(
        rows,
        cols,
        seed,
        2.5,
        |beta| vec![T::one(), T::of(beta.exp())],
        |alpha| {
            let same = T::of(alpha.exp());
            vec![same, T::one(), T::one(), same]
        },
    )
}

/// Transmitted and received bits of an LDPC instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LdpcGroundTruth {
    pub transmitted: Vec<u8>,
    pub received: Vec<u8>,
}

impl LdpcGroundTruth {
    pub fn flipped(&self) -> usize {
        self.transmitted
            .iter()
            .zip(&self.received)
            .filter(|(a, b)| a != b)
            .count()
    }

    /// True when the argmax of every variable marginal equals the
    /// transmitted bit. Variable `i` is model node `i`.
    pub fn decoded_by<T: Real>(&self, marginals: &[Vec<T>]) -> bool {
        self.transmitted.iter().enumerate().all(|(i, &bit)| {
            let m = &marginals[i];
            let guess = if m[1] > m[0] { 1 } else { 0 };
            guess == bit
        })
    }

    /// `ldpc-truth v1`: a header line then `bit <i> <transmitted> <received>`.
    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "ldpc-truth v1")?;
        for (i, (t, r)) in self.transmitted.iter().zip(&self.received).enumerate() {
            writeln!(out, "bit {i} {t} {r}")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn parse<R: BufRead>(input: R) -> Result<Self> {
        let mut transmitted = Vec::new();
        let mut received = Vec::new();
        for (k, line) in input.lines().enumerate() {
            let line = line?;
            let ln = k + 1;
            let line = line.trim();
            if line.is_empty() || (ln == 1 && line == "ldpc-truth v1") {
                continue;
            }
            let err = |msg: &str| Error::Parse { line: ln, msg: msg.to_string() };
            let tok: Vec<&str> = line.split_whitespace().collect();
            if tok.len() != 4 || tok[0] != "bit" {
                return Err(err("expected `bit <i> <transmitted> <received>`"));
            }
            let i: usize = tok[1].parse().map_err(|_| err("invalid bit index"))?;
            if i != transmitted.len() {
                return Err(err("bit indices must be consecutive from 0"));
            }
            let parse_bit = |s: &str| match s {
                "0" => Ok(0u8),
                "1" => Ok(1u8),
                _ => Err(err("bit values must be 0 or 1")),
            };
            transmitted.push(parse_bit(tok[2])?);
            received.push(parse_bit(tok[3])?);
        }
        Ok(Self { transmitted, received })
    }
}

const LDPC_VAR_DEGREE: usize = 3;
const LDPC_CHECK_DEGREE: usize = 6;
const LDPC_MAX_RESTARTS: usize = 1000;

/// Random (3,6)-regular LDPC decoding instance for the all-zero codeword
/// sent over a binary symmetric channel with flip probability `epsilon`.
///
/// Nodes `0..2n` are bits, nodes `2n..3n` are parity checks whose domain is
/// the 64 bitmasks of their six bits; bit `b` of a check's mask is its `b`-th
/// incident edge. Channel flips are drawn first, then the graph.
pub fn gen_ldpc<T: Real>(
    n: usize,
    epsilon: f64,
    seed: u64,
) -> Result<(MarkovRandomField<T>, LdpcGroundTruth)> {
    if n == 0 {
        return Err(Error::InvalidConfig("ldpc needs at least one constraint".into()));
    }
    if !(epsilon > 0.0 && epsilon < 0.5) {
        return Err(Error::InvalidConfig("ldpc channel error must lie in (0, 0.5)".into()));
    }
    let vars = 2 * n;
    let mut rng = SplitMix64::new(seed);
    let transmitted = vec![0u8; vars];
    let received: Vec<u8> = (0..vars).map(|_| u8::from(rng.next_f64() < epsilon)).collect();

    let sockets = build_biregular(vars, n, &mut rng)?;

    let mut domains = vec![2usize; vars];
    domains.extend(std::iter::repeat(1 << LDPC_CHECK_DEGREE).take(n));
    let mut node_factors: Vec<Vec<T>> = received
        .iter()
        .map(|&r| {
            let (keep, flip) = (T::of(1.0 - epsilon), T::of(epsilon));
            if r == 0 {
                vec![keep, flip]
            } else {
                vec![flip, keep]
            }
        })
        .collect();
    let parity: Vec<T> = (0..1u32 << LDPC_CHECK_DEGREE)
        .map(|y| if y.count_ones() % 2 == 0 { T::one() } else { T::zero() })
        .collect();
    node_factors.extend(std::iter::repeat(parity).take(n));

    let mut edges = Vec::with_capacity(vars * LDPC_VAR_DEGREE);
    let mut edge_factors = Vec::with_capacity(vars * LDPC_VAR_DEGREE);
    for c in 0..n {
        for b in 0..LDPC_CHECK_DEGREE {
            let v = sockets[c * LDPC_CHECK_DEGREE + b];
            edges.push((v, vars + c));
            let mut table = vec![T::zero(); 2 << LDPC_CHECK_DEGREE];
            for y in 0..1usize << LDPC_CHECK_DEGREE {
                let x = (y >> b) & 1;
                table[x * (1 << LDPC_CHECK_DEGREE) + y] = T::one();
            }
            edge_factors.push(table);
        }
    }
    let mrf = MarkovRandomField::new(domains, node_factors, edges, edge_factors)?;
    Ok((mrf, LdpcGroundTruth { transmitted, received }))
}

/// Configuration model: slot `c * 6 + b` of the result is the bit attached
/// to socket `b` of check `c`. Parallel edges are repaired by random swaps;
/// a shuffle whose repair stalls is discarded and redrawn.
fn build_biregular(vars: usize, checks: usize, rng: &mut SplitMix64) -> Result<Vec<usize>> {
    let base: Vec<usize> = (0..vars)
        .flat_map(|v| std::iter::repeat(v).take(LDPC_VAR_DEGREE))
        .collect();
    debug_assert_eq!(base.len(), checks * LDPC_CHECK_DEGREE);
    let check_of = |slot: usize| slot / LDPC_CHECK_DEGREE;
    let clashes = |s: &[usize], slot: usize, v: usize| {
        let c = check_of(slot);
        (c * LDPC_CHECK_DEGREE..(c + 1) * LDPC_CHECK_DEGREE).any(|t| t != slot && s[t] == v)
    };

    'restart: for _ in 0..=LDPC_MAX_RESTARTS {
        let mut slots = base.clone();
        rng.shuffle(&mut slots);
        for slot in 0..slots.len() {
            let mut tries = 0;
            while clashes(&slots, slot, slots[slot]) {
                tries += 1;
                if tries > 200 || checks < 2 {
                    continue 'restart;
                }
                let other = rng.below(slots.len());
                if check_of(other) == check_of(slot) {
                    continue;
                }
                let (a, b) = (slots[slot], slots[other]);
                if !clashes(&slots, slot, b) && !clashes(&slots, other, a) {
                    slots.swap(slot, other);
                }
            }
        }
        return Ok(slots);
    }
    Err(Error::GraphConstructionFailed(LDPC_MAX_RESTARTS))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tree_shapes() {
        let t: MarkovRandomField<f64> = gen_tree(1).unwrap();
        assert_eq!(t.edge_count(), 0);
        assert_eq!(t.node_factor(0), &[0.1, 0.9]);
        let t: MarkovRandomField<f64> = gen_tree(3).unwrap();
        assert_eq!(t.edges(), &[(0, 1), (0, 2)]);
        assert_eq!(t.node_factor(2), &[0.5, 0.5]);
        assert_eq!(t.edge_factor(1), &[1.0, 0.0, 0.0, 1.0]);
        let t: MarkovRandomField<f32> = gen_tree(1_000_000).unwrap();
        assert_eq!(t.edge_count(), 999_999);
        assert_eq!(t.message_count(), 1_999_998);
    }

    #[test]
    fn grid_counts() {
        let g: MarkovRandomField<f64> = gen_ising(1, 1, 0).unwrap();
        assert_eq!(g.edge_count(), 0);
        assert_eq!(grid_edges(300, 300).len(), 179_400);
        assert_eq!(grid_edges(1000, 1000).len(), 1_998_000);
        let p: MarkovRandomField<f64> = gen_potts(2, 2, 0).unwrap();
        assert_eq!((p.node_count(), p.edge_count()), (4, 4));
        assert_eq!(grid_edges(2, 2), vec![(0, 1), (0, 2), (1, 3), (2, 3)]);
    }

    #[test]
    fn ising_factor_ranges() {
        let g: MarkovRandomField<f64> = gen_ising(20, 20, 5).unwrap();
        let (lo, hi) = ((-1.0f64).exp(), 1.0f64.exp());
        for i in 0..g.node_count() {
            let f = g.node_factor(i);
            assert!(f.iter().all(|&v| v >= lo && v <= hi));
            assert!((f[0] * f[1] - 1.0).abs() < 1e-12);
        }
        for e in 0..g.edge_count() {
            let f = g.edge_factor(e);
            assert!(f.iter().all(|&v| v >= lo && v <= hi));
            assert_eq!(f[0], f[3]);
            assert_eq!(f[1], f[2]);
        }
    }

    #[test]
    fn potts_off_diagonal_is_one() {
        let g: MarkovRandomField<f64> = gen_potts(10, 10, 5).unwrap();
        let (lo, hi) = ((-2.5f64).exp(), 2.5f64.exp());
        for e in 0..g.edge_count() {
            let f = g.edge_factor(e);
            assert_eq!((f[1], f[2]), (1.0, 1.0));
            assert!(f[0] >= lo && f[0] <= hi);
        }
        for i in 0..g.node_count() {
            assert_eq!(g.node_factor(i)[0], 1.0);
        }
    }

    #[test]
    fn generators_are_deterministic() {
        let a: MarkovRandomField<f64> = gen_potts(7, 9, 42).unwrap();
        let b: MarkovRandomField<f64> = gen_potts(7, 9, 42).unwrap();
        let c: MarkovRandomField<f64> = gen_potts(7, 9, 43).unwrap();
        for e in 0..a.edge_count() {
            assert_eq!(a.edge_factor(e), b.edge_factor(e));
        }
        assert!((0..a.edge_count()).any(|e| a.edge_factor(e) != c.edge_factor(e)));
        let (x, tx) = gen_ldpc::<f64>(50, 0.07, 3).unwrap();
        let (y, ty) = gen_ldpc::<f64>(50, 0.07, 3).unwrap();
        assert_eq!(x.edges(), y.edges());
        assert_eq!(tx, ty);
    }

    #[test]
    fn ldpc_structure() {
        let (m, truth) = gen_ldpc::<f64>(200, 0.07, 9).unwrap();
        let vars = 400;
        assert_eq!(m.node_count(), 600);
        assert_eq!(m.edge_count(), 1200);
        for v in 0..vars {
            assert_eq!(m.degree(v), 3);
            assert_eq!(m.domain(v), 2);
        }
        let mut pairs = std::collections::HashSet::new();
        for c in vars..600 {
            assert_eq!(m.degree(c), 6);
            assert_eq!(m.domain(c), 64);
            for a in m.neighbors(c) {
                assert!(a.neighbor < vars);
                assert!(pairs.insert((a.neighbor, c)), "parallel edge");
            }
            let f = m.node_factor(c);
            assert_eq!(f[0b000000], 1.0);
            assert_eq!(f[0b000001], 0.0);
            assert_eq!(f[0b000011], 1.0);
        }
        assert!(truth.transmitted.iter().all(|&b| b == 0));
        for (v, &r) in truth.received.iter().enumerate() {
            let f = m.node_factor(v);
            if r == 0 {
                assert_eq!(f, &[1.0 - 0.07, 0.07]);
            } else {
                assert_eq!(f, &[0.07, 1.0 - 0.07]);
            }
        }
    }

    #[test]
    fn ldpc_edge_factor_selects_bit() {
        let (m, _) = gen_ldpc::<f64>(10, 0.07, 1).unwrap();
        let vars = 20;
        for c in 0..10 {
            for b in 0..6 {
                let e = c * 6 + b;
                let (v, check) = m.edge(e);
                assert!(v < vars && check == vars + c);
                let t = m.edge_factor(e);
                for y in 0..64 {
                    for x in 0..2 {
                        let want = if (y >> b) & 1 == x { 1.0 } else { 0.0 };
                        assert_eq!(t[x * 64 + y], want);
                    }
                }
            }
        }
    }

    #[test]
    fn ldpc_flip_count_is_binomial() {
        let (_, truth) = gen_ldpc::<f32>(5000, 0.07, 1).unwrap();
        assert_eq!(truth.transmitted.len(), 10_000);
        let mean = 10_000.0 * 0.07;
        let sigma = (10_000.0f64 * 0.07 * 0.93).sqrt();
        let flips = truth.flipped() as f64;
        assert!((flips - mean).abs() <= 4.0 * sigma, "{flips} flips");
    }

    #[test]
    fn truth_file_round_trip() {
        let (_, truth) = gen_ldpc::<f64>(20, 0.2, 4).unwrap();
        let mut buf = Vec::new();
        truth.write(&mut buf).unwrap();
        let back = LdpcGroundTruth::parse(buf.as_slice()).unwrap();
        assert_eq!(back, truth);
        assert!(LdpcGroundTruth::parse("bit 0 0 2\n".as_bytes()).is_err());
        assert!(LdpcGroundTruth::parse("bit 1 0 0\n".as_bytes()).is_err());
    }

    #[test]
    fn spec_validation() {
        let bad = ModelSpec { kind: ModelKind::Ldpc { constraints: 5, epsilon: 0.6 }, seed: 0 };
        assert!(bad.generate::<f64>().is_err());
        let ok = ModelSpec { kind: ModelKind::Ising { rows: 3, cols: 4 }, seed: 0 };
        let (m, truth) = ok.generate::<f64>().unwrap();
        assert_eq!(m.node_count(), 12);
        assert!(truth.is_none());
    }
}
