//! Pairwise Markov random fields and the sum-product message update.
//!
//! Every undirected edge `e = {i, j}` (stored as `(i, j)`) carries two directed
//! messages: [`MessageId`] `2e` for `i -> j` and `2e + 1` for `j -> i`. A
//! message is a probability vector over the domain of its target node.

mod io;
mod messages;
mod oracle;
mod update;

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scalar::Real;

pub use io::{parse_mrf_txt, read_mrf_txt, write_mrf_txt};
pub use messages::{MessageView, Messages, SharedMessages};
pub use oracle::{brute_force_marginals, exact_tree_marginals, is_forest, BRUTE_FORCE_LIMIT};
pub use update::{
    compute_message, compute_message_into, estimate_marginal, estimate_marginals, l1_normalize,
    l1_normalize_in_place, l2_distance, message_residual, node_residual, MessageScratch,
};

/// Index of one directed message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MessageId(pub usize);

impl MessageId {
    #[inline]
    pub fn index(self) -> usize {
        self.0
    }

    #[inline]
    pub fn edge(self) -> usize {
        self.0 / 2
    }

    /// The message travelling the same edge in the opposite direction.
    #[inline]
    pub fn reverse(self) -> MessageId {
        MessageId(self.0 ^ 1)
    }
}

/// One entry of a node's adjacency list.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Adjacent {
    pub neighbor: usize,
    pub edge: usize,
    /// Message `neighbor -> self`.
    pub incoming: MessageId,
    /// Message `self -> neighbor`.
    pub outgoing: MessageId,
}

/// Immutable pairwise MRF with dense factor tables.
#[derive(Debug, Clone)]
pub struct MarkovRandomField<T> {
    domains: Vec<usize>,
    node_factor_offsets: Vec<usize>,
    node_factors: Vec<T>,
    edges: Vec<(usize, usize)>,
    edge_factor_offsets: Vec<usize>,
    edge_factors: Vec<T>,
    adj_offsets: Vec<usize>,
    adj: Vec<Adjacent>,
    message_layout: Arc<[usize]>,
}

impl<T: Real> MarkovRandomField<T> {
    /// Builds and validates a model. `edge_factors[e]` is the row-major
    /// `|D_i| x |D_j|` table for `edges[e] = (i, j)`.
    pub fn new(
        domains: Vec<usize>,
        node_factors: Vec<Vec<T>>,
        edges: Vec<(usize, usize)>,
        edge_factors: Vec<Vec<T>>,
    ) -> Result<Self> {
        let n = domains.len();
        let invalid = |msg: String| Err(Error::InvalidModel(msg));
        if node_factors.len() != n {
            return invalid(format!("{} node factors for {} nodes", node_factors.len(), n));
        }
        if edge_factors.len() != edges.len() {
            return invalid(format!(
                "{} edge factors for {} edges",
                edge_factors.len(),
                edges.len()
            ));
        }
        for (i, (&d, f)) in domains.iter().zip(&node_factors).enumerate() {
            if d == 0 {
                return invalid(format!("node {i} has an empty domain"));
            }
            if f.len() != d {
                return invalid(format!("node {i}: factor has {} entries, domain {d}", f.len()));
            }
            if f.iter().any(|v| !(v.is_finite() && *v >= T::zero())) {
                return invalid(format!("node {i}: factor entries must be finite and non-negative"));
            }
            if !f.iter().any(|v| *v > T::zero()) {
                return invalid(format!("node {i}: factor has no positive entry"));
            }
        }
        let mut seen = std::collections::HashSet::with_capacity(edges.len());
        for (e, (&(i, j), f)) in edges.iter().zip(&edge_factors).enumerate() {
            if i >= n || j >= n {
                return invalid(format!("edge {e}: endpoint out of range"));
            }
            if i == j {
                return invalid(format!("edge {e}: self loop on node {i}"));
            }
            if !seen.insert((i.min(j), i.max(j))) {
                return invalid(format!("edge {e}: duplicate edge {{{i}, {j}}}"));
            }
            if f.len() != domains[i] * domains[j] {
                return invalid(format!(
                    "edge {e}: factor has {} entries, expected {}x{}",
                    f.len(),
                    domains[i],
                    domains[j]
                ));
            }
            if f.iter().any(|v| !(v.is_finite() && *v >= T::zero())) {
                return invalid(format!("edge {e}: factor entries must be finite and non-negative"));
            }
        }

        let (node_factor_offsets, node_factors) = flatten(node_factors);
        let (edge_factor_offsets, edge_factors) = flatten(edge_factors);

        let mut degree = vec![0usize; n];
        for &(i, j) in &edges {
            degree[i] += 1;
            degree[j] += 1;
        }
        let mut adj_offsets = Vec::with_capacity(n + 1);
        adj_offsets.push(0);
        for d in &degree {
            adj_offsets.push(adj_offsets.last().unwrap() + d);
        }
        let mut fill = adj_offsets.clone();
        let placeholder = Adjacent {
            neighbor: 0,
            edge: 0,
            incoming: MessageId(0),
            outgoing: MessageId(0),
        };
        let mut adj = vec![placeholder; adj_offsets[n]];
        for (e, &(i, j)) in edges.iter().enumerate() {
            let fwd = MessageId(2 * e);
            let bwd = MessageId(2 * e + 1);
            adj[fill[i]] = Adjacent { neighbor: j, edge: e, incoming: bwd, outgoing: fwd };
            fill[i] += 1;
            adj[fill[j]] = Adjacent { neighbor: i, edge: e, incoming: fwd, outgoing: bwd };
            fill[j] += 1;
        }

        let mut layout = Vec::with_capacity(2 * edges.len() + 1);
        layout.push(0);
        for &(i, j) in &edges {
            let last = *layout.last().unwrap();
            layout.push(last + domains[j]);
            layout.push(last + domains[j] + domains[i]);
        }

        Ok(Self {
            domains,
            node_factor_offsets,
            node_factors,
            edges,
            edge_factor_offsets,
            edge_factors,
            adj_offsets,
            adj,
            message_layout: layout.into(),
        })
    }
}

fn flatten<T: Copy>(tables: Vec<Vec<T>>) -> (Vec<usize>, Vec<T>) {
    let mut offsets = Vec::with_capacity(tables.len() + 1);
    offsets.push(0);
    let mut flat = Vec::with_capacity(tables.iter().map(Vec::len).sum());
    for t in tables {
        flat.extend_from_slice(&t);
        offsets.push(flat.len());
    }
    (offsets, flat)
}

impl<T> MarkovRandomField<T> {
    #[inline]
    pub fn node_count(&self) -> usize {
        self.domains.len()
    }

    #[inline]
    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    #[inline]
    pub fn message_count(&self) -> usize {
        2 * self.edges.len()
    }

    #[inline]
    pub fn domain(&self, node: usize) -> usize {
        self.domains[node]
    }

    pub fn domains(&self) -> &[usize] {
        &self.domains
    }

    #[inline]
    pub fn node_factor(&self, node: usize) -> &[T] {
        &self.node_factors[self.node_factor_offsets[node]..self.node_factor_offsets[node + 1]]
    }

    #[inline]
    pub fn edge(&self, e: usize) -> (usize, usize) {
        self.edges[e]
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Row-major table of edge `e = (i, j)`, indexed `[x_i * |D_j| + x_j]`.
    #[inline]
    pub fn edge_factor(&self, e: usize) -> &[T] {
        &self.edge_factors[self.edge_factor_offsets[e]..self.edge_factor_offsets[e + 1]]
    }

    #[inline]
    pub fn neighbors(&self, node: usize) -> &[Adjacent] {
        &self.adj[self.adj_offsets[node]..self.adj_offsets[node + 1]]
    }

    #[inline]
    pub fn degree(&self, node: usize) -> usize {
        self.adj_offsets[node + 1] - self.adj_offsets[node]
    }

    pub fn max_degree(&self) -> usize {
        (0..self.node_count()).map(|i| self.degree(i)).max().unwrap_or(0)
    }

    /// `(from, to)` of a directed message.
    #[inline]
    pub fn endpoints(&self, id: MessageId) -> (usize, usize) {
        let (i, j) = self.edges[id.edge()];
        if id.0 & 1 == 0 {
            (i, j)
        } else {
            (j, i)
        }
    }

    pub fn message_id(&self, from: usize, to: usize) -> Option<MessageId> {
        if from >= self.node_count() {
            return None;
        }
        self.neighbors(from)
            .iter()
            .find(|a| a.neighbor == to)
            .map(|a| a.outgoing)
    }

    /// Length of the message vector, i.e. the domain size of its target.
    #[inline]
    pub fn message_len(&self, id: MessageId) -> usize {
        self.message_layout[id.0 + 1] - self.message_layout[id.0]
    }

    pub(crate) fn message_layout(&self) -> &Arc<[usize]> {
        &self.message_layout
    }

    pub fn message_ids(&self) -> impl Iterator<Item = MessageId> {
        (0..self.message_count()).map(MessageId)
    }

    /// Number of joint assignments, saturating at `u128::MAX`.
    pub fn state_space_size(&self) -> u128 {
        self.domains
            .iter()
            .try_fold(1u128, |acc, &d| acc.checked_mul(d as u128))
            .unwrap_or(u128::MAX)
    }
}

impl<T: Real> MarkovRandomField<T> {
    /// Pairwise factor value `psi(x_from, x_to)` oriented along a message.
    #[inline]
    pub fn pair_factor(&self, id: MessageId, x_from: usize, x_to: usize) -> T {
        let e = id.edge();
        let (_, j) = self.edges[e];
        let table = self.edge_factor(e);
        if id.0 & 1 == 0 {
            table[x_from * self.domains[j] + x_to]
        } else {
            table[x_to * self.domains[j] + x_from]
        }
    }
}
