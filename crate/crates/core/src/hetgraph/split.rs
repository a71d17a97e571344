use std::collections::HashSet;
use std::hash::Hash;

use rand::seq::SliceRandom;
use rand::Rng;

use super::{GraphError, NodeId, Triple};

/// Disjoint train/valid/test partition of labeled nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeSplit {
    pub train: Vec<NodeId>,
    pub valid: Vec<NodeId>,
    pub test: Vec<NodeId>,
}

/// Disjoint train/valid/test partition of triples.
#[derive(Debug, Clone, PartialEq)]
pub struct TripleSplit {
    pub train: Vec<Triple>,
    pub valid: Vec<Triple>,
    pub test: Vec<Triple>,
}

fn check_partition<T: Copy + Eq + Hash + std::fmt::Debug>(parts: [&[T]; 3], universe: &[T]) -> Result<(), GraphError> {
    let mut seen = HashSet::new();
    for part in parts {
        for x in part {
            if !seen.insert(*x) {
                return Err(GraphError::Split(format!("{:?} appears in more than one partition", x)));
            }
        }
    }
    let all: HashSet<T> = universe.iter().copied().collect();
    if seen != all {
        return Err(GraphError::Split("partitions do not cover the full set exactly".into()));
    }
    Ok(())
}

fn shuffle_split<T: Copy>(items: &[T], valid_frac: f64, test_frac: f64, rng: &mut impl Rng) -> [Vec<T>; 3] {
    let mut v = items.to_vec();
    v.shuffle(rng);
    let n = v.len();
    let n_test = ((n as f64) * test_frac).round() as usize;
    let n_valid = ((n as f64) * valid_frac).round() as usize;
    let test = v[..n_test].to_vec();
    let valid = v[n_test..(n_test + n_valid).min(n)].to_vec();
    let train = v[(n_test + n_valid).min(n)..].to_vec();
    [train, valid, test]
}

impl NodeSplit {
    pub fn new(train: Vec<NodeId>, valid: Vec<NodeId>, test: Vec<NodeId>, labeled: &[NodeId]) -> Result<Self, GraphError> {
        check_partition([&train, &valid, &test], labeled)?;
        Ok(Self { train, valid, test })
    }

    /// Random partition; each part is sorted by node id.
    pub fn random(labeled: &[NodeId], valid_frac: f64, test_frac: f64, rng: &mut impl Rng) -> Self {
        let [mut train, mut valid, mut test] = shuffle_split(labeled, valid_frac, test_frac, rng);
        train.sort_unstable();
        valid.sort_unstable();
        test.sort_unstable();
        Self { train, valid, test }
    }
}

impl TripleSplit {
    pub fn new(train: Vec<Triple>, valid: Vec<Triple>, test: Vec<Triple>, all: &[Triple]) -> Result<Self, GraphError> {
        check_partition([&train, &valid, &test], all)?;
        Ok(Self { train, valid, test })
    }

    pub fn random(all: &[Triple], valid_frac: f64, test_frac: f64, rng: &mut impl Rng) -> Self {
        let [train, valid, test] = shuffle_split(all, valid_frac, test_frac, rng);
        Self { train, valid, test }
    }

    pub fn all(&self) -> Vec<Triple> {
        self.train.iter().chain(&self.valid).chain(&self.test).copied().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn random_split_partitions() {
        let labeled: Vec<NodeId> = (0..50).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = NodeSplit::random(&labeled, 0.2, 0.2, &mut rng);
        assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (30, 10, 10));
        assert!(NodeSplit::new(s.train, s.valid, s.test, &labeled).is_ok());
    }

    #[test]
    fn overlap_rejected() {
        let err = NodeSplit::new(vec![0, 1], vec![1], vec![2], &[0, 1, 2]).unwrap_err();
        assert!(matches!(err, GraphError::Split(_)));
        let err = NodeSplit::new(vec![0], vec![1], vec![], &[0, 1, 2]).unwrap_err();
        assert!(matches!(err, GraphError::Split(_)));
    }
}
