use std::cmp::Ordering;
use std::time::Instant;

use rayon::prelude::*;

use super::synchronous::thread_pool;
use super::verify::full_scan;
use super::{finish, EngineConfig, Outcome, RunReport};
use crate::error::Result;
use crate::mrf::{
    compute_message, compute_message_into, l2_distance, MarkovRandomField,
    MessageId, MessageScratch, Messages,
};
use crate::scalar::Real;

/// Nodes updated per round: a tenth of the graph, rounded up.
pub fn bucket_size(nodes: usize) -> usize {
    nodes.div_ceil(10)
}

/// Largest residual among the messages leaving `node`: the pending change a
/// node would push to its neighbours if processed now.
pub fn sender_residual<T>(mrf: &MarkovRandomField<T>, residuals: &[f64], node: usize) -> f64 {
    mrf.neighbors(node)
        .iter()
        .map(|a| residuals[a.outgoing.index()])
        .fold(0.0, f64::max)
}

/// Rounds that update every outgoing message of the `bucket_size` nodes with
/// the largest sender residual (ties to the smaller index). New values are
/// computed from the state at the start of the round.
pub fn run_bucket<T: Real>(mrf: &MarkovRandomField<T>, config: &EngineConfig) -> Result<RunReport> {
    config.validate()?;
    let start = Instant::now();
    let deadline = config.deadline(start);
    let pool = thread_pool(config.workers)?;
    let p = config.workers;
    let n = mrf.node_count();
    let tau = config.threshold;

    let mut msgs = Messages::uniform(mrf);
    let mut residuals = full_scan(mrf, &msgs)?.residuals;
    let mut node_res: Vec<f64> = (0..n).map(|i| sender_residual(mrf, &residuals, i)).collect();
    let mut per_worker = vec![0u64; p];
    let mut rounds = 0u64;
    let mut mark = vec![0u64; mrf.message_count()];
    let mut node_mark = vec![0u64; n];
    let mut order: Vec<usize> = (0..n).collect();

    let converged = loop {
        if node_res.iter().all(|&r| r < tau) {
            let scan = full_scan(mrf, &msgs)?;
            if scan.converged(tau) {
                break true;
            }
            // incremental residuals drifted from the truth; resynchronise
            residuals = scan.residuals;
            node_res = (0..n).map(|i| sender_residual(mrf, &residuals, i)).collect();
        }
        if Instant::now() >= deadline {
            break false;
        }
        rounds += 1;

        let k = bucket_size(n);
        let rank = |a: &usize, b: &usize| -> Ordering {
            node_res[*b].total_cmp(&node_res[*a]).then(a.cmp(b))
        };
        if k < n {
            order.select_nth_unstable_by(k - 1, rank);
        }
        let selected = &mut order[..k];
        selected.sort_unstable();
        let updated: Vec<MessageId> = selected
            .iter()
            .flat_map(|&i| mrf.neighbors(i).iter().map(|a| a.outgoing))
            .collect();

        let values: Vec<Vec<T>> = pool.install(|| {
            updated
                .par_iter()
                .map(|&id| compute_message(mrf, &msgs, id))
                .collect::<Result<_>>()
        })?;
        for (&id, v) in updated.iter().zip(&values) {
            msgs.set(id, v);
        }
        for w in 0..p {
            per_worker[w] += ((w + 1) * updated.len() / p - w * updated.len() / p) as u64;
        }

        let stamp = rounds;
        let mut touched = Vec::new();
        for &id in &updated {
            if mark[id.index()] != stamp {
                mark[id.index()] = stamp;
                touched.push(id);
            }
            let (from, to) = mrf.endpoints(id);
            for a in mrf.neighbors(to) {
                if a.neighbor != from && mark[a.outgoing.index()] != stamp {
                    mark[a.outgoing.index()] = stamp;
                    touched.push(a.outgoing);
                }
            }
        }
        let fresh: Vec<f64> = pool.install(|| {
            touched
                .par_iter()
                .map_init(
                    || (MessageScratch::new(), Vec::new()),
                    |(scratch, out), &id| {
                        compute_message_into(mrf, &msgs, id, scratch, out)?;
                        Ok(l2_distance(out, msgs.get(id)).as_f64())
                    },
                )
                .collect::<Result<_>>()
        })?;
        for (&id, r) in touched.iter().zip(fresh) {
            residuals[id.index()] = r;
        }
        for &id in &touched {
            let from = mrf.endpoints(id).0;
            if node_mark[from] != stamp {
                node_mark[from] = stamp;
                node_res[from] = sender_residual(mrf, &residuals, from);
            }
        }
    };
    let outcome = Outcome { converged, per_worker, useful: None, rounds: Some(rounds) };
    finish(mrf, &msgs, config, start, outcome)
}
