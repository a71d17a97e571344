use std::collections::HashSet;

use rand::Rng;

use super::TrainError;
use crate::hetgraph::{HeteroGraph, Triple};

/// Resampling attempts per negative before giving up.
pub const MAX_RETRIES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Head,
    Tail,
}

/// Corrupts one slot of a triple with a uniform entity, rejecting known
/// positives.
#[derive(Debug, Clone)]
pub struct NegativeSampler {
    num_entities: usize,
    known: HashSet<Triple>,
}

impl NegativeSampler {
    pub fn new(num_entities: usize, known: impl IntoIterator<Item = Triple>) -> Result<Self, TrainError> {
        if num_entities == 0 {
            return Err(TrainError::Config("negative sampling needs at least one entity".into()));
        }
        Ok(Self { num_entities, known: known.into_iter().collect() })
    }

    pub fn is_known(&self, t: &Triple) -> bool {
        self.known.contains(t)
    }

    /// One negative and the slot that was replaced.
    pub fn corrupt(&self, positive: Triple, rng: &mut impl Rng) -> Result<(Triple, Slot), TrainError> {
        for _ in 0..=MAX_RETRIES {
            let slot = if rng.gen_bool(0.5) { Slot::Head } else { Slot::Tail };
            let e = rng.gen_range(0..self.num_entities);
            let t = match slot {
                Slot::Head => Triple::new(e, positive.rel, positive.tail),
                Slot::Tail => Triple::new(positive.head, positive.rel, e),
            };
            if !self.known.contains(&t) {
                return Ok((t, slot));
            }
        }
        Err(TrainError::SamplingExhausted { triple: positive, retries: MAX_RETRIES })
    }

    pub fn sample(&self, positive: Triple, omega: usize, rng: &mut impl Rng) -> Result<Vec<Triple>, TrainError> {
        (0..omega).map(|_| self.corrupt(positive, rng).map(|(t, _)| t)).collect()
    }
}

/// `omega` negatives for `positive`, filtered against every triple of `graph`.
pub fn negative_sample(positive: Triple, graph: &HeteroGraph, omega: usize, rng: &mut impl Rng) -> Result<Vec<Triple>, TrainError> {
    NegativeSampler::new(graph.num_nodes(), graph.triples().iter().copied())?.sample(positive, omega, rng)
}

/// Triples with their 0/1 indicators.
#[derive(Debug, Clone, PartialEq)]
pub struct TripleBatch {
    pub triples: Vec<Triple>,
    pub y: Vec<bool>,
}

impl TripleBatch {
    pub fn new(triples: Vec<Triple>, y: Vec<bool>) -> Result<Self, TrainError> {
        if triples.len() != y.len() {
            return Err(TrainError::Config(format!("{} triples but {} indicators", triples.len(), y.len())));
        }
        Ok(Self { triples, y })
    }

    /// The positives followed by `omega` negatives per positive.
    pub fn with_negatives(
        positives: &[Triple],
        sampler: &NegativeSampler,
        omega: usize,
        rng: &mut impl Rng,
    ) -> Result<Self, TrainError> {
        let mut triples = positives.to_vec();
        let mut y = vec![true; positives.len()];
        for &p in positives {
            triples.extend(sampler.sample(p, omega, rng)?);
        }
        y.resize(triples.len(), false);
        Ok(Self { triples, y })
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }
}
