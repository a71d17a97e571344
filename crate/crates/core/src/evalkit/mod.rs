//! Accuracy, ranking metrics and the relation-attention ablation harness.

mod ablation;
mod ranking;

pub use ablation::{
    ablate, ablation_csv, ablation_splits, base_relation_scores, relation_attention_score, AblationOutcome, AblationRow, AblationSplit,
    Strategy, ABLATION_HEADER,
};
pub use ranking::{rank_triples, RankMetrics, RankResult, RankSummary};

use crate::diffnum::Tensor;
use crate::hetgraph::{NodeId, NodeLabels};
use crate::training::TrainError;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("evaluation split is empty")]
    EmptySplit,
    #[error("node {0} has no label")]
    Unlabeled(NodeId),
    #[error("predictions have shape {0:?}")]
    Shape(Vec<usize>),
    #[error("ablation: {0}")]
    Ablation(String),
    #[error(transparent)]
    Train(#[from] TrainError),
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax(row: &[f64]) -> usize {
    row.iter().enumerate().fold(0, |best, (k, &x)| if x > row[best] { k } else { best })
}

/// Percentage of `nodes` whose arg-max prediction equals the label.
pub fn accuracy(predictions: &Tensor, labels: &NodeLabels, nodes: &[NodeId]) -> Result<f64, EvalError> {
    if nodes.is_empty() {
        return Err(EvalError::EmptySplit);
    }
    if predictions.ndim() != 2 || predictions.rows() != labels.num_nodes() {
        return Err(EvalError::Shape(predictions.shape().to_vec()));
    }
    let mut correct = 0;
    for &i in nodes {
        let label = labels.label(i).ok_or(EvalError::Unlabeled(i))?;
        if argmax(predictions.row(i)) == label {
            correct += 1;
        }
    }
    Ok(100.0 * correct as f64 / nodes.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels() -> NodeLabels {
        NodeLabels::new(4, &[(0, 0), (1, 1), (2, 0), (3, 1)], 2).unwrap()
    }

    #[test]
    fn all_correct_is_100() {
        let p = Tensor::from_rows(&[vec![0.9, 0.1], vec![0.2, 0.8], vec![0.6, 0.4], vec![0.0, 1.0]]).unwrap();
        assert_eq!(accuracy(&p, &labels(), &[0, 1, 2, 3]).unwrap(), 100.0);
    }

    #[test]
    fn one_of_four_is_25() {
        let p = Tensor::from_rows(&[vec![0.9, 0.1], vec![0.8, 0.2], vec![0.4, 0.6], vec![1.0, 0.0]]).unwrap();
        assert_eq!(accuracy(&p, &labels(), &[0, 1, 2, 3]).unwrap(), 25.0);
    }

    #[test]
    fn empty_split_is_error() {
        let p = Tensor::zeros(&[4, 2]);
        assert!(matches!(accuracy(&p, &labels(), &[]), Err(EvalError::EmptySplit)));
    }
}
