use std::time::Instant;

use rayon::prelude::*;

use super::verify::full_scan;
use super::{finish, EngineConfig, Outcome, RunReport};
use crate::error::{Error, Result};
use crate::mrf::{compute_message_into, l2_distance, MarkovRandomField, MessageId, MessageScratch, Messages};
use crate::scalar::Real;

pub(crate) fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))
}

/// Rounds of simultaneous updates: every message is recomputed from the
/// previous round's state. Worker `w` owns the `w`-th contiguous block of
/// message ids.
pub fn run_synchronous<T: Real>(
    mrf: &MarkovRandomField<T>,
    config: &EngineConfig,
) -> Result<RunReport> {
    config.validate()?;
    let start = Instant::now();
    let deadline = config.deadline(start);
    let pool = thread_pool(config.workers)?;
    let p = config.workers;
    let m = mrf.message_count();
    let bounds: Vec<usize> = (0..=p).map(|w| w * m / p).collect();

    let mut cur = Messages::uniform(mrf);
    let mut next = cur.clone();
    let mut per_worker = vec![0u64; p];
    let mut rounds = 0u64;
    let converged = loop {
        if Instant::now() >= deadline {
            break false;
        }
        let max_change = pool.install(|| round(mrf, &cur, &mut next, &bounds))?;
        std::mem::swap(&mut cur, &mut next);
        rounds += 1;
        for (w, n) in per_worker.iter_mut().enumerate() {
            *n += (bounds[w + 1] - bounds[w]) as u64;
        }
        if max_change < config.threshold && full_scan(mrf, &cur)?.converged(config.threshold) {
            break true;
        }
    };
    let outcome = Outcome { converged, per_worker, useful: None, rounds: Some(rounds) };
    finish(mrf, &cur, config, start, outcome)
}

/// One synchronous round; returns the largest L2 change.
fn round<T: Real>(
    mrf: &MarkovRandomField<T>,
    cur: &Messages<T>,
    next: &mut Messages<T>,
    bounds: &[usize],
) -> Result<f64> {
    let layout = next.layout().clone();
    let mut rest = next.raw_values_mut();
    let mut blocks = Vec::with_capacity(bounds.len() - 1);
    let mut base = 0;
    for w in 0..bounds.len() - 1 {
        let end = layout[bounds[w + 1]];
        let (head, tail) = std::mem::take(&mut rest).split_at_mut(end - base);
        blocks.push((bounds[w]..bounds[w + 1], head, base));
        rest = tail;
        base = end;
    }
    blocks
        .into_par_iter()
        .map(|(ids, block, base)| {
            let mut scratch = MessageScratch::new();
            let mut out = Vec::new();
            let mut max_change = 0.0f64;
            for k in ids {
                compute_message_into(mrf, cur, MessageId(k), &mut scratch, &mut out)?;
                let change = l2_distance(&out, cur.get(MessageId(k))).as_f64();
                max_change = max_change.max(change);
                block[layout[k] - base..layout[k + 1] - base].copy_from_slice(&out);
            }
            Ok(max_change)
        })
        .try_reduce(|| 0.0, |a, b| Ok(a.max(b)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engines::Variant;
    use crate::models::gen_tree;

    #[test]
    fn each_round_updates_every_message() {
        let mrf = gen_tree::<f64>(31).unwrap();
        let mut c = EngineConfig::new(Variant::Synchronous);
        c.workers = 3;
        let r = run_synchronous(&mrf, &c).unwrap();
        assert!(r.converged);
        let rounds = r.rounds.unwrap();
        assert_eq!(r.total_updates, rounds * mrf.message_count() as u64);
        // depth 4: changes reach the deepest level in round 4, round 5 is quiet
        assert_eq!(rounds, 5);
    }

    #[test]
    fn worker_count_does_not_change_the_result() {
        let mrf = crate::models::gen_ising::<f64>(6, 7, 3).unwrap();
        let mut c = EngineConfig::new(Variant::Synchronous);
        let one = run_synchronous(&mrf, &c).unwrap();
        c.workers = 4;
        let four = run_synchronous(&mrf, &c).unwrap();
        assert_eq!(one.total_updates, four.total_updates);
        assert_eq!(one.marginals, four.marginals);
    }
}
