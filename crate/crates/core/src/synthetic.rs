//! Generated graphs for tests, benchmarks and quick experiments.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::hetgraph::{HeteroGraph, NodeLabels, NodeSplit, RelId, Triple};

/// Node classification data where only one relation carries the label.
#[derive(Debug, Clone)]
pub struct Planted {
    /// Un-augmented graph.
    pub graph: HeteroGraph,
    pub labels: NodeLabels,
    pub split: NodeSplit,
    /// The informative relation.
    pub signal: RelId,
    pub noise: Vec<RelId>,
}

/// `num_classes` hub nodes followed by item nodes. Each item links to the hub
/// of its class under relation 0 (`signal`); relations `1..num_relations`
/// give every item `noise_degree` out-edges to uniformly random items.
/// Items are labeled and split half train, half test.
pub fn planted(num_nodes: usize, num_relations: usize, num_classes: usize, noise_degree: usize, seed: u64) -> Planted {
    assert!(num_nodes > 2 * num_classes && num_relations >= 2 && num_classes >= 2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let items: Vec<usize> = (num_classes..num_nodes).collect();
    let mut pairs = Vec::with_capacity(items.len());
    let mut triples = Vec::new();
    for (k, &i) in items.iter().enumerate() {
        let c = k % num_classes;
        pairs.push((i, c));
        triples.push(Triple::new(i, 0, c));
        for r in 1..num_relations {
            for _ in 0..noise_degree {
                triples.push(Triple::new(i, r, *items.choose(&mut rng).unwrap()));
            }
        }
    }
    let relations = (0..num_relations).map(|r| format!("r{}", r + 1)).collect();
    let names = (0..num_nodes)
        .map(|i| if i < num_classes { format!("hub{}", i) } else { format!("item{}", i) })
        .collect();
    let (graph, _) = HeteroGraph::with_names(names, relations, triples).unwrap();
    let labels = NodeLabels::new(num_nodes, &pairs, num_classes).unwrap();
    let split = NodeSplit::random(&items, 0.0, 0.5, &mut rng);
    Planted { graph, labels, split, signal: 0, noise: (1..num_relations).collect() }
}

/// The 60-node, 3-relation, 3-class planted graph.
pub fn planted_default(seed: u64) -> Planted {
    planted(60, 3, 3, 2, seed)
}

/// `num_triples` distinct random triples over `num_entities` entities.
pub fn random_kg(num_entities: usize, num_relations: usize, num_triples: usize, seed: u64) -> HeteroGraph {
    assert!(num_triples <= num_entities * num_entities * num_relations);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = BTreeSet::new();
    while set.len() < num_triples {
        set.insert(Triple::new(
            rng.gen_range(0..num_entities),
            rng.gen_range(0..num_relations),
            rng.gen_range(0..num_entities),
        ));
    }
    let relations = (0..num_relations).map(|r| format!("r{}", r + 1)).collect();
    HeteroGraph::new(num_entities, relations, set.into_iter().collect()).unwrap().0
}

/// Each possible edge is present with probability `p`.
pub fn random_graph(num_nodes: usize, num_relations: usize, p: f64, rng: &mut impl Rng) -> HeteroGraph {
    let mut triples = Vec::new();
    for h in 0..num_nodes {
        for r in 0..num_relations {
            for t in 0..num_nodes {
                if rng.gen_bool(p) {
                    triples.push(Triple::new(h, r, t));
                }
            }
        }
    }
    let relations = (0..num_relations).map(|r| format!("r{}", r)).collect();
    HeteroGraph::new(num_nodes, relations, triples).unwrap().0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn planted_shape() {
        let p = planted_default(1);
        assert_eq!(p.graph.num_nodes(), 60);
        assert_eq!(p.graph.num_relations(), 3);
        assert_eq!(p.labels.labeled_ids().len(), 57);
        for i in p.labels.labeled_ids() {
            let hub = p.graph.neighbors(i, 0).unwrap();
            assert_eq!(hub, &[p.labels.label(i).unwrap()]);
        }
        assert_eq!(p.split.train.len() + p.split.test.len(), 57);
    }

    #[test]
    fn random_kg_is_distinct() {
        let g = random_kg(20, 2, 50, 3);
        assert_eq!(g.num_triples(), 50);
    }
}
