use std::collections::{BTreeSet, HashMap};
use std::io::Write;

use super::sim::Rank;
use super::Scheduler;
use crate::error::Result;
use crate::rng::SplitMix64;

/// Drives `scheduler` with a random mix of upserts (60%) and pops over keys
/// `0..key_space`, and returns the rank of every popped task measured
/// against a shadow exact queue.
pub fn measure_ranks(
    scheduler: &dyn Scheduler,
    key_space: usize,
    ops: usize,
    seed: u64,
) -> Vec<usize> {
    let mut script = SplitMix64::new(seed);
    let mut rng = SplitMix64::fork(seed, 1);
    let mut shadow: BTreeSet<Rank> = BTreeSet::new();
    let mut live: HashMap<usize, f64> = HashMap::new();
    let mut ranks = Vec::new();
    for _ in 0..ops {
        if script.below(5) < 3 {
            let key = script.below(key_space);
            let priority = script.next_f64();
            if let Some(old) = live.insert(key, priority) {
                shadow.remove(&Rank { priority: old, key });
            }
            shadow.insert(Rank { priority, key });
            scheduler.insert(key, priority, &mut rng);
        } else if let Ok(t) = scheduler.approx_delete_max(&mut rng) {
            let me = Rank { priority: t.priority, key: t.key };
            ranks.push(1 + shadow.range(..me).count());
            shadow.remove(&me);
            live.remove(&t.key);
        }
    }
    ranks
}

/// CSV with columns `op,rank`.
pub fn write_rank_trace<W: Write>(ranks: &[usize], mut out: W) -> Result<()> {
    writeln!(out, "op,rank")?;
    for (i, r) in ranks.iter().enumerate() {
        writeln!(out, "{i},{r}")?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedulers::{ExactScheduler, MultiQueue};

    #[test]
    fn exact_scheduler_always_rank_one() {
        let s = ExactScheduler::new(200);
        let ranks = measure_ranks(&s, 200, 20_000, 1);
        assert!(!ranks.is_empty());
        assert!(ranks.iter().all(|&r| r == 1));
    }

    #[test]
    fn multiqueue_mean_rank_is_bounded() {
        let m = 64;
        let s = MultiQueue::new(100_000, m);
        let ranks = measure_ranks(&s, 100_000, 1_000_000, 2);
        let mean = ranks.iter().sum::<usize>() as f64 / ranks.len() as f64;
        assert!(mean <= 2.0 * m as f64, "mean rank {mean}");
    }

    #[test]
    fn trace_csv_format() {
        let mut buf = Vec::new();
        write_rank_trace(&[1, 3], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "op,rank\n0,1\n1,3\n");
    }
}
