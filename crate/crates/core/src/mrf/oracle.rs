//! Reference marginals that do not depend on any message schedule.

use super::MarkovRandomField;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Largest joint state space [`brute_force_marginals`] will enumerate.
pub const BRUTE_FORCE_LIMIT: u128 = 10_000_000;

/// Exact marginals by enumerating every joint assignment.
pub fn brute_force_marginals<T: Real>(mrf: &MarkovRandomField<T>) -> Result<Vec<Vec<T>>> {
    let size = mrf.state_space_size();
    if size > BRUTE_FORCE_LIMIT {
        return Err(Error::TooLarge(size));
    }
    let n = mrf.node_count();
    let domains = mrf.domains();
    let mut acc: Vec<Vec<f64>> = domains.iter().map(|&d| vec![0.0; d]).collect();
    let mut x = vec![0usize; n];
    let mut total = 0.0f64;
    loop {
        let mut w = 1.0f64;
        for (i, &xi) in x.iter().enumerate() {
            w *= mrf.node_factor(i)[xi].as_f64();
            if w == 0.0 {
                break;
            }
        }
        if w != 0.0 {
            for (e, &(i, j)) in mrf.edges().iter().enumerate() {
                w *= mrf.edge_factor(e)[x[i] * domains[j] + x[j]].as_f64();
                if w == 0.0 {
                    break;
                }
            }
        }
        if w != 0.0 {
            total += w;
            for (i, &xi) in x.iter().enumerate() {
                acc[i][xi] += w;
            }
        }
        // mixed-radix increment
        let mut k = 0;
        while k < n {
            x[k] += 1;
            if x[k] < domains[k] {
                break;
            }
            x[k] = 0;
            k += 1;
        }
        if k == n {
            break;
        }
    }
    if !(total > 0.0) {
        return Err(Error::ZeroDistribution);
    }
    Ok(acc
        .into_iter()
        .map(|row| row.into_iter().map(|v| T::of(v / total)).collect())
        .collect())
}

/// True when the graph has no cycles.
pub fn is_forest<T>(mrf: &MarkovRandomField<T>) -> bool {
    let n = mrf.node_count();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut v: usize) -> usize {
        while p[v] != v {
            p[v] = p[p[v]];
            v = p[v];
        }
        v
    }
    for &(i, j) in mrf.edges() {
        let (a, b) = (find(&mut parent, i), find(&mut parent, j));
        if a == b {
            return false;
        }
        parent[a] = b;
    }
    true
}

/// Exact marginals of a forest-structured model by one upward and one
/// downward sweep per component, computed in `f64`.
pub fn exact_tree_marginals<T: Real>(mrf: &MarkovRandomField<T>) -> Result<Vec<Vec<T>>> {
    if !is_forest(mrf) {
        return Err(Error::InvalidModel("graph contains a cycle".into()));
    }
    let n = mrf.node_count();
    let psi = |i: usize| -> Vec<f64> { mrf.node_factor(i).iter().map(|v| v.as_f64()).collect() };

    // BFS order and parents per component
    let mut parent = vec![usize::MAX; n];
    let mut order = Vec::with_capacity(n);
    let mut seen = vec![false; n];
    for root in 0..n {
        if seen[root] {
            continue;
        }
        seen[root] = true;
        let start = order.len();
        order.push(root);
        let mut head = start;
        while head < order.len() {
            let v = order[head];
            head += 1;
            for a in mrf.neighbors(v) {
                if !seen[a.neighbor] {
                    seen[a.neighbor] = true;
                    parent[a.neighbor] = v;
                    order.push(a.neighbor);
                }
            }
        }
    }

    let normalize = |v: &mut Vec<f64>| -> Result<()> {
        let s: f64 = v.iter().sum();
        if !(s > 0.0) {
            return Err(Error::ZeroDistribution);
        }
        v.iter_mut().for_each(|x| *x /= s);
        Ok(())
    };

    // upward messages v -> parent(v), indexed by v
    let mut up: Vec<Vec<f64>> = vec![Vec::new(); n];
    for &v in order.iter().rev() {
        let p = parent[v];
        if p == usize::MAX {
            continue;
        }
        let mut belief = psi(v);
        for a in mrf.neighbors(v) {
            if a.neighbor != p {
                belief.iter_mut().zip(&up[a.neighbor]).for_each(|(b, m)| *b *= m);
            }
        }
        let id = mrf.message_id(v, p).expect("tree edge");
        let mut msg = vec![0.0; mrf.domain(p)];
        for (xv, &b) in belief.iter().enumerate() {
            for (xp, m) in msg.iter_mut().enumerate() {
                *m += b * mrf.pair_factor(id, xv, xp).as_f64();
            }
        }
        normalize(&mut msg)?;
        up[v] = msg;
    }

    // downward messages parent(v) -> v, indexed by v
    let mut down: Vec<Vec<f64>> = vec![Vec::new(); n];
    for &v in &order {
        let p = parent[v];
        if p == usize::MAX {
            continue;
        }
        let mut belief = psi(p);
        if parent[p] != usize::MAX {
            belief.iter_mut().zip(&down[p]).for_each(|(b, m)| *b *= m);
        }
        for a in mrf.neighbors(p) {
            if a.neighbor != v && a.neighbor != parent[p] {
                belief.iter_mut().zip(&up[a.neighbor]).for_each(|(b, m)| *b *= m);
            }
        }
        let id = mrf.message_id(p, v).expect("tree edge");
        let mut msg = vec![0.0; mrf.domain(v)];
        for (xp, &b) in belief.iter().enumerate() {
            for (xv, m) in msg.iter_mut().enumerate() {
                *m += b * mrf.pair_factor(id, xp, xv).as_f64();
            }
        }
        normalize(&mut msg)?;
        down[v] = msg;
    }

    (0..n)
        .map(|v| {
            let mut belief = psi(v);
            if parent[v] != usize::MAX {
                belief.iter_mut().zip(&down[v]).for_each(|(b, m)| *b *= m);
            }
            for a in mrf.neighbors(v) {
                if a.neighbor != parent[v] {
                    belief.iter_mut().zip(&up[a.neighbor]).for_each(|(b, m)| *b *= m);
                }
            }
            normalize(&mut belief)?;
            Ok(belief.into_iter().map(T::of).collect())
        })
        .collect()
}
