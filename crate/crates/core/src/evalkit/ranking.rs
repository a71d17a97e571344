use std::collections::{BTreeMap, HashSet};

use serde::Serialize;

use crate::exec::Execution;
use crate::hetgraph::Triple;

/// Ranks of one test triple among its head and tail corruptions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RankResult {
    pub raw_rank_head: usize,
    pub raw_rank_tail: usize,
    pub filt_rank_head: usize,
    pub filt_rank_tail: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RankMetrics {
    pub mrr: f64,
    pub hits_at_1: f64,
    pub hits_at_3: f64,
    pub hits_at_10: f64,
}

impl RankMetrics {
    /// All zeros for an empty rank list.
    pub fn from_ranks(ranks: &[usize]) -> Self {
        if ranks.is_empty() {
            return Self { mrr: 0.0, hits_at_1: 0.0, hits_at_3: 0.0, hits_at_10: 0.0 };
        }
        let n = ranks.len() as f64;
        let hits = |k: usize| ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
        Self {
            mrr: ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n,
            hits_at_1: hits(1),
            hits_at_3: hits(3),
            hits_at_10: hits(10),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RankSummary {
    pub raw: RankMetrics,
    pub filtered: RankMetrics,
}

impl RankSummary {
    /// Flat `metric -> value` map for results files.
    pub fn to_map(&self) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        for (prefix, r) in [("raw", &self.raw), ("filtered", &self.filtered)] {
            m.insert(format!("{}_mrr", prefix), r.mrr);
            m.insert(format!("{}_hits@1", prefix), r.hits_at_1);
            m.insert(format!("{}_hits@3", prefix), r.hits_at_3);
            m.insert(format!("{}_hits@10", prefix), r.hits_at_10);
        }
        m
    }
}

/// Counts candidates scoring at least as high as the target, so ties rank
/// the target last.
fn ranks_for(
    scorer: &(impl Fn(Triple) -> f64 + Sync),
    target: Triple,
    num_entities: usize,
    known: &HashSet<Triple>,
    corrupt: impl Fn(usize) -> Triple,
) -> (usize, usize) {
    let s = scorer(target);
    let (mut raw, mut filt) = (1, 1);
    for e in 0..num_entities {
        let c = corrupt(e);
        if c == target {
            continue;
        }
        if scorer(c) >= s {
            raw += 1;
            if !known.contains(&c) {
                filt += 1;
            }
        }
    }
    (raw, filt)
}

/// Raw and filtered ranks of every test triple against all head and tail
/// corruptions. `known` holds every known positive; in the filtered
/// setting those are removed from the candidates (the target itself is
/// always kept).
pub fn rank_triples<S>(
    scorer: S,
    test: &[Triple],
    num_entities: usize,
    known: &HashSet<Triple>,
    exec: Execution,
) -> (Vec<RankResult>, RankSummary)
where
    S: Fn(Triple) -> f64 + Sync + Send,
{
    let results = exec.map(test, |&t| {
        let (raw_rank_head, filt_rank_head) = ranks_for(&scorer, t, num_entities, known, |e| Triple::new(e, t.rel, t.tail));
        let (raw_rank_tail, filt_rank_tail) = ranks_for(&scorer, t, num_entities, known, |e| Triple::new(t.head, t.rel, e));
        RankResult { raw_rank_head, raw_rank_tail, filt_rank_head, filt_rank_tail }
    });
    let raw: Vec<usize> = results.iter().flat_map(|r| [r.raw_rank_head, r.raw_rank_tail]).collect();
    let filt: Vec<usize> = results.iter().flat_map(|r| [r.filt_rank_head, r.filt_rank_tail]).collect();
    let summary = RankSummary { raw: RankMetrics::from_ranks(&raw), filtered: RankMetrics::from_ranks(&filt) };
    (results, summary)
}
