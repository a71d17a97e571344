use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{accuracy, EvalError};
use crate::exec::Execution;
use crate::hetgraph::{HeteroGraph, NodeLabels, NodeSplit, RelId};
use crate::layer::AttentionTrace;
use crate::training::{predict_nc, train_nc, NcData, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    Random,
    TopAttention,
    BottomAttention,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Random, Strategy::TopAttention, Strategy::BottomAttention];
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Random => "random",
            Strategy::TopAttention => "top_attention",
            Strategy::BottomAttention => "bottom_attention",
        })
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.to_string() == s)
            .ok_or_else(|| format!("unknown strategy {:?} (expected random, top_attention, bottom_attention)", s))
    }
}

/// Mean, over every traced node with `r ∈ R_i`, of the mean of ψ_i's column
/// for `r` (the attention mass other relations send to `r`). Relations that
/// never occur score 0.
pub fn relation_attention_score(traces: &[AttentionTrace], r: RelId) -> f64 {
    let (mut total, mut count) = (0.0, 0usize);
    for nt in traces.iter().flat_map(|t| &t.nodes) {
        let (Some(psi), Some(pos)) = (&nt.psi, nt.relations.iter().position(|&x| x == r)) else { continue };
        total += psi.iter().map(|row| row[pos]).sum::<f64>() / psi.len() as f64;
        count += 1;
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

/// Score of each base relation of an augmented graph: the mean of its own
/// score and its inverse's score when the inverse exists.
pub fn base_relation_scores(traces: &[AttentionTrace], graph: &HeteroGraph) -> Vec<(RelId, f64)> {
    graph
        .base_relations()
        .into_iter()
        .map(|r| {
            let own = relation_attention_score(traces, r);
            let s = match graph.inverse_relation(r) {
                Some(inv) => 0.5 * (own + relation_attention_score(traces, inv)),
                None => own,
            };
            (r, s)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationSplit {
    pub strategy: Strategy,
    pub fraction: f64,
    /// Retained relations, in selection order.
    pub relations: Vec<RelId>,
}

/// Retained-relation sets of size `⌈fraction · |R|⌉`. Each strategy fixes
/// one ordering of the relations and every fraction takes a prefix of it,
/// so the sets are nested. Ties in score keep relation-id order.
pub fn ablation_splits(
    scores: &[(RelId, f64)],
    strategy: Strategy,
    fractions: &[f64],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<AblationSplit>, EvalError> {
    let mut order: Vec<(RelId, f64)> = scores.to_vec();
    match strategy {
        Strategy::Random => order.shuffle(rng),
        Strategy::TopAttention => order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))),
        Strategy::BottomAttention => order.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0))),
    }
    fractions
        .iter()
        .map(|&f| {
            if !(f > 0.0 && f <= 1.0) {
                return Err(EvalError::Ablation(format!("fraction {} outside (0, 1]", f)));
            }
            let k = ((f * order.len() as f64) - 1e-9).ceil() as usize;
            if k == 0 {
                return Err(EvalError::Ablation(format!("fraction {} retains no relations", f)));
            }
            Ok(AblationSplit { strategy, fraction: f, relations: order[..k].iter().map(|p| p.0).collect() })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub strategy: Strategy,
    pub fraction: f64,
    pub seed: u64,
    pub accuracy: f64,
}

/// Base relation scores and one row per retrained split.
pub type AblationOutcome = (Vec<(RelId, f64)>, Vec<AblationRow>);

pub const ABLATION_HEADER: &str = "strategy,fraction,seed,accuracy";

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::new();
    writeln!(s, "{}", ABLATION_HEADER).unwrap();
    for r in rows {
        writeln!(s, "{},{},{},{}", r.strategy, r.fraction, r.seed, r.accuracy).unwrap();
    }
    s
}

/// Trains on the full graph, ranks the base relations by attention, then
/// retrains from scratch with the same config on every retained-relation
/// subgraph and records test accuracy. `graph` is the un-augmented graph;
/// `augment` gives the inverse and self-loop flags applied to every
/// subgraph. Returns the base relation scores and one row per split.
#[allow(clippy::too_many_arguments)]
pub fn ablate(
    graph: &HeteroGraph,
    labels: &NodeLabels,
    split: &NodeSplit,
    cfg: &TrainConfig,
    augment: (bool, bool),
    strategies: &[Strategy],
    fractions: &[f64],
    exec: Execution,
) -> Result<AblationOutcome, EvalError> {
    if split.test.is_empty() {
        return Err(EvalError::EmptySplit);
    }
    let full = graph.augment(augment.0, augment.1);
    let run = train_nc(cfg, &NcData { graph: &full, labels, split }, exec, |_| {})?;
    let (_, traces) = predict_nc(&run.model, &full, exec)?;
    let scores = base_relation_scores(&traces, &full);

    let mut rows = Vec::new();
    for &strategy in strategies {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        for s in ablation_splits(&scores, strategy, fractions, &mut rng)? {
            let sub = graph.filter_relations(&s.relations).augment(augment.0, augment.1);
            let run = train_nc(cfg, &NcData { graph: &sub, labels, split }, exec, |_| {})?;
            let (probs, _) = predict_nc(&run.model, &sub, exec)?;
            rows.push(AblationRow { strategy, fraction: s.fraction, seed: cfg.seed, accuracy: accuracy(&probs, labels, &split.test)? });
        }
    }
    Ok((scores, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layer::NodeTrace;
    use approx::assert_abs_diff_eq;

    fn trace(relations: Vec<RelId>, psi: Vec<Vec<f64>>) -> AttentionTrace {
        let m = relations.len();
        AttentionTrace {
            nodes: vec![NodeTrace { node: 0, relations, neighbors: vec![vec![0]; m], gamma: vec![vec![1.0]; m], psi: Some(psi) }],
        }
    }

    #[test]
    fn column_average_example() {
        let t = trace(vec![0, 1], vec![vec![0.7, 0.3], vec![0.6, 0.4]]);
        assert_abs_diff_eq!(relation_attention_score(std::slice::from_ref(&t), 0), 0.65, epsilon = 1e-15);
        assert_abs_diff_eq!(relation_attention_score(&[t], 1), 0.35, epsilon = 1e-15);
    }

    #[test]
    fn uniform_psi_scores_one_over_m() {
        let t = trace(vec![0, 1, 2], vec![vec![1.0 / 3.0; 3]; 3]);
        for r in 0..3 {
            assert_abs_diff_eq!(relation_attention_score(std::slice::from_ref(&t), r), 1.0 / 3.0, epsilon = 1e-15);
        }
        assert_eq!(relation_attention_score(&[t], 7), 0.0);
    }

    #[test]
    fn splits_are_nested_and_sized() {
        let scores: Vec<(RelId, f64)> = (0..7).map(|r| (r, (r as f64 * 1.7).sin())).collect();
        let fractions: Vec<f64> = (1..=10).map(|k| k as f64 / 10.0).collect();
        for strategy in Strategy::ALL {
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            let splits = ablation_splits(&scores, strategy, &fractions, &mut rng).unwrap();
            for (s, f) in splits.iter().zip(&fractions) {
                assert_eq!(s.relations.len(), (f * 7.0 - 1e-9).ceil() as usize);
            }
            for w in splits.windows(2) {
                assert!(w[1].relations.starts_with(&w[0].relations));
            }
            assert_eq!(splits.last().unwrap().relations.len(), 7);
        }
    }

    #[test]
    fn top_and_bottom_orderings() {
        let scores = vec![(0, 0.2), (1, 0.5), (2, 0.3)];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let top = ablation_splits(&scores, Strategy::TopAttention, &[1.0], &mut rng).unwrap();
        assert_eq!(top[0].relations, vec![1, 2, 0]);
        let bottom = ablation_splits(&scores, Strategy::BottomAttention, &[1.0], &mut rng).unwrap();
        assert_eq!(bottom[0].relations, vec![0, 2, 1]);
    }

    #[test]
    fn zero_fraction_is_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(ablation_splits(&[(0, 1.0)], Strategy::Random, &[0.0], &mut rng).is_err());
    }
}
