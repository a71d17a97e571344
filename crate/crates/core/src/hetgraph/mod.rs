//! Directed multi-relational graphs with relation-restricted neighbor access.

mod io;
mod split;

use std::collections::{HashMap, HashSet};

pub use io::{load_labels, load_node_list, load_triple_list, load_triples, parse_ntriples, parse_tsv, GraphLoad, TripleFormat};
pub use split::{NodeSplit, TripleSplit};

pub type NodeId = usize;
pub type RelId = usize;

/// Name of the relation added by self-loop augmentation.
pub const SELF_RELATION: &str = "SELF";
const INVERSE_PREFIX: &str = "inv:";

#[derive(Debug, thiserror::Error)]
pub enum GraphError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("graph file contains no triples")]
    EmptyGraph,
    #[error("{what} id {id} out of range (limit {limit})")]
    OutOfBounds { what: &'static str, id: usize, limit: usize },
    #[error("unknown node {0:?}")]
    UnknownNode(String),
    #[error("unknown relation {0:?}")]
    UnknownRelation(String),
    #[error("invalid split: {0}")]
    Split(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub head: NodeId,
    pub rel: RelId,
    pub tail: NodeId,
}

impl Triple {
    pub fn new(head: NodeId, rel: RelId, tail: NodeId) -> Self {
        Self { head, rel, tail }
    }
}

/// Immutable directed labeled graph `(V, E, R)`.
///
/// Out-neighbors only: `neighbors(i, r)` lists the tails `j` of triples
/// `(i, r, j)`. Incoming edges become visible through inverse-relation
/// augmentation.
#[derive(Debug, Clone, PartialEq)]
pub struct HeteroGraph {
    node_names: Vec<String>,
    relations: Vec<String>,
    triples: Vec<Triple>,
    /// `inverse_of[r] = Some(b)` when `r` was added as the inverse of `b`.
    inverse_of: Vec<Option<RelId>>,
    self_relation: Option<RelId>,
    /// Per node: `(relation, sorted out-neighbors)` sorted by relation.
    adjacency: Vec<Vec<(RelId, Vec<NodeId>)>>,
}

impl HeteroGraph {
    /// Builds a graph from id-level triples, dropping duplicates (first
    /// occurrence kept). Returns the graph and the number of duplicates.
    pub fn new(num_nodes: usize, relations: Vec<String>, triples: Vec<Triple>) -> Result<(Self, usize), GraphError> {
        let names = (0..num_nodes).map(|i| i.to_string()).collect();
        Self::with_names(names, relations, triples)
    }

    pub fn with_names(
        node_names: Vec<String>,
        relations: Vec<String>,
        triples: Vec<Triple>,
    ) -> Result<(Self, usize), GraphError> {
        let n = node_names.len();
        let nr = relations.len();
        for t in &triples {
            for (what, id, limit) in [("node", t.head, n), ("relation", t.rel, nr), ("node", t.tail, n)] {
                if id >= limit {
                    return Err(GraphError::OutOfBounds { what, id, limit });
                }
            }
        }
        let mut seen = HashSet::with_capacity(triples.len());
        let before = triples.len();
        let triples: Vec<Triple> = triples.into_iter().filter(|t| seen.insert(*t)).collect();
        let duplicates = before - triples.len();
        let inverse_of = vec![None; nr];
        let mut g = Self { node_names, relations, triples, inverse_of, self_relation: None, adjacency: Vec::new() };
        g.rebuild_index();
        Ok((g, duplicates))
    }

    /// Assigns dense ids in first-seen order (head before tail, line order).
    pub fn from_named<'a>(
        rows: impl IntoIterator<Item = (&'a str, &'a str, &'a str)>,
    ) -> Result<(Self, usize), GraphError> {
        let mut nodes: HashMap<&str, NodeId> = HashMap::new();
        let mut rels: HashMap<&str, RelId> = HashMap::new();
        let mut node_names = Vec::new();
        let mut rel_names = Vec::new();
        let mut triples = Vec::new();
        for (h, r, t) in rows {
            let mut node = |name: &'a str| {
                *nodes.entry(name).or_insert_with(|| {
                    node_names.push(name.to_string());
                    node_names.len() - 1
                })
            };
            let hi = node(h);
            let ti = node(t);
            let ri = *rels.entry(r).or_insert_with(|| {
                rel_names.push(r.to_string());
                rel_names.len() - 1
            });
            triples.push(Triple::new(hi, ri, ti));
        }
        if triples.is_empty() {
            return Err(GraphError::EmptyGraph);
        }
        Self::with_names(node_names, rel_names, triples)
    }

    fn rebuild_index(&mut self) {
        self.adjacency = build_adjacency(self.node_names.len(), &self.triples);
    }

    pub fn num_nodes(&self) -> usize {
        self.node_names.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn relations(&self) -> &[String] {
        &self.relations
    }

    pub fn relation_name(&self, r: RelId) -> &str {
        &self.relations[r]
    }

    pub fn relation_id(&self, name: &str) -> Option<RelId> {
        self.relations.iter().position(|n| n == name)
    }

    pub fn node_name(&self, i: NodeId) -> &str {
        &self.node_names[i]
    }

    pub fn node_names(&self) -> &[String] {
        &self.node_names
    }

    pub fn node_id(&self, name: &str) -> Option<NodeId> {
        self.node_names.iter().position(|n| n == name)
    }

    /// Name → id lookup table for bulk resolution.
    pub fn node_lookup(&self) -> HashMap<&str, NodeId> {
        self.node_names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect()
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn num_triples(&self) -> usize {
        self.triples.len()
    }

    pub fn self_relation(&self) -> Option<RelId> {
        self.self_relation
    }

    pub fn inverse_of(&self, r: RelId) -> Option<RelId> {
        self.inverse_of[r]
    }

    /// Base relations: neither inverses nor the self-loop relation.
    pub fn base_relations(&self) -> Vec<RelId> {
        (0..self.num_relations())
            .filter(|&r| self.inverse_of[r].is_none() && Some(r) != self.self_relation)
            .collect()
    }

    /// The inverse relation added for base relation `r`, if any.
    pub fn inverse_relation(&self, r: RelId) -> Option<RelId> {
        self.inverse_of.iter().position(|&b| b == Some(r))
    }

    fn check_node(&self, i: NodeId) -> Result<(), GraphError> {
        if i >= self.num_nodes() {
            return Err(GraphError::OutOfBounds { what: "node", id: i, limit: self.num_nodes() });
        }
        Ok(())
    }

    /// `N_i^r`: sorted out-neighbors of `i` under `r`.
    pub fn neighbors(&self, i: NodeId, r: RelId) -> Result<&[NodeId], GraphError> {
        self.check_node(i)?;
        if r >= self.num_relations() {
            return Err(GraphError::OutOfBounds { what: "relation", id: r, limit: self.num_relations() });
        }
        Ok(self.adjacency[i]
            .binary_search_by_key(&r, |(rel, _)| *rel)
            .map(|k| self.adjacency[i][k].1.as_slice())
            .unwrap_or(&[]))
    }

    /// `R_i`: sorted relations with at least one out-edge from `i`.
    pub fn relations_of(&self, i: NodeId) -> Result<Vec<RelId>, GraphError> {
        self.check_node(i)?;
        Ok(self.adjacency[i].iter().map(|(r, _)| *r).collect())
    }

    /// `(r, N_i^r)` for every `r` in `R_i`, in relation order. Panics on a bad id.
    pub fn neighborhoods(&self, i: NodeId) -> &[(RelId, Vec<NodeId>)] {
        &self.adjacency[i]
    }

    /// Recomputes the neighbor index from the triple list and compares it
    /// with the stored one.
    pub fn index_is_consistent(&self) -> bool {
        build_adjacency(self.num_nodes(), &self.triples) == self.adjacency
    }

    /// Adds inverse relations and/or the self-loop relation. Idempotent:
    /// relations that already have an inverse are skipped, and the self
    /// relation is added at most once.
    pub fn augment(&self, add_inverse: bool, add_self_loop: bool) -> HeteroGraph {
        let mut g = self.clone();
        if add_inverse {
            for r in self.base_relations() {
                if g.inverse_relation(r).is_some() {
                    continue;
                }
                let inv = g.relations.len();
                g.relations.push(format!("{}{}", INVERSE_PREFIX, self.relations[r]));
                g.inverse_of.push(Some(r));
                let reversed: Vec<Triple> = self
                    .triples
                    .iter()
                    .filter(|t| t.rel == r)
                    .map(|t| Triple::new(t.tail, inv, t.head))
                    .collect();
                g.triples.extend(reversed);
            }
        }
        if add_self_loop && g.self_relation.is_none() {
            let s = g.relations.len();
            g.relations.push(SELF_RELATION.to_string());
            g.inverse_of.push(None);
            g.self_relation = Some(s);
            g.triples.extend((0..g.num_nodes()).map(|i| Triple::new(i, s, i)));
        }
        g.rebuild_index();
        g
    }

    /// Same nodes and relation table, keeping only triples whose relation is
    /// in `keep`.
    pub fn filter_relations(&self, keep: &[RelId]) -> HeteroGraph {
        let keep: HashSet<RelId> = keep.iter().copied().collect();
        let mut g = self.clone();
        g.triples.retain(|t| keep.contains(&t.rel));
        g.rebuild_index();
        g
    }

    /// Same nodes and relation table with a different triple list (for
    /// building the training graph of a link-prediction split).
    pub fn with_triples(&self, triples: Vec<Triple>) -> Result<HeteroGraph, GraphError> {
        let (mut g, _) = Self::with_names(self.node_names.clone(), self.relations.clone(), triples)?;
        g.inverse_of = self.inverse_of.clone();
        g.self_relation = self.self_relation;
        Ok(g)
    }

    /// Relabels nodes: node `i` becomes `perm[i]`.
    pub fn permute_nodes(&self, perm: &[NodeId]) -> Result<HeteroGraph, GraphError> {
        let n = self.num_nodes();
        let mut names = vec![String::new(); n];
        for (i, &p) in perm.iter().enumerate() {
            names[p] = self.node_names[i].clone();
        }
        let triples = self.triples.iter().map(|t| Triple::new(perm[t.head], t.rel, perm[t.tail])).collect();
        let mut g = self.with_triples(triples)?;
        g.node_names = names;
        Ok(g)
    }
}

fn build_adjacency(num_nodes: usize, triples: &[Triple]) -> Vec<Vec<(RelId, Vec<NodeId>)>> {
    let mut adj: Vec<Vec<(RelId, Vec<NodeId>)>> = vec![Vec::new(); num_nodes];
    let mut sorted: Vec<Triple> = triples.to_vec();
    sorted.sort_unstable();
    for t in sorted {
        let list = &mut adj[t.head];
        match list.last_mut() {
            Some((r, tails)) if *r == t.rel => tails.push(t.tail),
            _ => list.push((t.rel, vec![t.tail])),
        }
    }
    adj
}

/// Labeled subset `Y` of the nodes with class indices in `[0, K)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeLabels {
    labels: Vec<Option<usize>>,
    class_names: Vec<String>,
}

impl NodeLabels {
    pub fn new(num_nodes: usize, pairs: &[(NodeId, usize)], num_classes: usize) -> Result<Self, GraphError> {
        let mut labels = vec![None; num_nodes];
        for &(i, c) in pairs {
            if i >= num_nodes {
                return Err(GraphError::OutOfBounds { what: "node", id: i, limit: num_nodes });
            }
            if c >= num_classes {
                return Err(GraphError::OutOfBounds { what: "class", id: c, limit: num_classes });
            }
            labels[i] = Some(c);
        }
        let class_names = (0..num_classes).map(|c| c.to_string()).collect();
        Ok(Self { labels, class_names })
    }

    pub fn with_class_names(mut self, names: Vec<String>) -> Self {
        assert_eq!(names.len(), self.class_names.len());
        self.class_names = names;
        self
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn label(&self, i: NodeId) -> Option<usize> {
        self.labels.get(i).copied().flatten()
    }

    pub fn labeled_ids(&self) -> Vec<NodeId> {
        self.labels.iter().enumerate().filter_map(|(i, l)| l.map(|_| i)).collect()
    }

    pub fn num_nodes(&self) -> usize {
        self.labels.len()
    }

    /// Relabels nodes: node `i` becomes `perm[i]`.
    pub fn permute_nodes(&self, perm: &[NodeId]) -> NodeLabels {
        let mut labels = vec![None; self.labels.len()];
        for (i, l) in self.labels.iter().enumerate() {
            labels[perm[i]] = *l;
        }
        Self { labels, class_names: self.class_names.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small() -> HeteroGraph {
        let t = vec![Triple::new(0, 0, 1), Triple::new(0, 0, 2), Triple::new(0, 1, 2)];
        HeteroGraph::new(3, vec!["r".into(), "s".into()], t).unwrap().0
    }

    #[test]
    fn neighbors_lists_sorted_out_edges() {
        let g = small();
        assert_eq!(g.neighbors(0, 0).unwrap(), &[1, 2]);
        assert!(g.neighbors(1, 0).unwrap().is_empty());
        assert_eq!(g.relations_of(0).unwrap(), vec![0, 1]);
        assert!(matches!(g.neighbors(7, 0), Err(GraphError::OutOfBounds { what: "node", .. })));
        assert!(matches!(g.neighbors(0, 5), Err(GraphError::OutOfBounds { what: "relation", .. })));
    }

    #[test]
    fn inverse_edges_point_back() {
        let g = small().augment(true, false);
        let inv = g.inverse_relation(0).unwrap();
        assert_eq!(g.neighbors(1, inv).unwrap(), &[0]);
        assert_eq!(g.relation_name(inv), "inv:r");
    }

    #[test]
    fn augment_counts() {
        let (g, _) = HeteroGraph::new(2, vec!["r".into()], vec![Triple::new(0, 0, 1)]).unwrap();
        let a = g.augment(true, true);
        assert_eq!(a.num_relations(), 3);
        assert_eq!(a.num_triples(), 4);

        let (iso, _) = HeteroGraph::new(5, vec![], vec![]).unwrap();
        let s = iso.augment(false, true);
        assert_eq!(s.num_triples(), 5);
        let self_rel = s.self_relation().unwrap();
        for i in 0..5 {
            assert_eq!(s.relations_of(i).unwrap(), vec![self_rel]);
        }
    }

    #[test]
    fn augment_is_idempotent() {
        let g = small();
        for (inv, sl) in [(true, false), (false, true), (true, true)] {
            let once = g.augment(inv, sl);
            assert_eq!(once.augment(inv, sl), once);
            assert_eq!(once.augment(true, true).augment(true, true), once.augment(true, true));
        }
    }

    #[test]
    fn out_of_range_triples_rejected() {
        let err = HeteroGraph::new(2, vec!["r".into()], vec![Triple::new(0, 0, 2)]).unwrap_err();
        assert!(matches!(err, GraphError::OutOfBounds { .. }));
    }

    #[test]
    fn permutation_relabels_edges() {
        let g = small();
        let p = g.permute_nodes(&[2, 0, 1]).unwrap();
        assert_eq!(p.neighbors(2, 0).unwrap(), &[0, 1]);
        assert_eq!(p.node_name(2), "0");
    }

    fn arb_triples() -> impl Strategy<Value = (usize, usize, Vec<(usize, usize, usize)>)> {
        (1usize..12, 1usize..4).prop_flat_map(|(n, r)| {
            (Just(n), Just(r), proptest::collection::vec((0..n, 0..r, 0..n), 0..40))
        })
    }

    proptest! {
        #[test]
        fn index_matches_triples((n, r, raw) in arb_triples(), inv in any::<bool>(), sl in any::<bool>()) {
            let triples: Vec<Triple> = raw.iter().map(|&(h, rel, t)| Triple::new(h, rel, t)).collect();
            let rels = (0..r).map(|k| format!("r{}", k)).collect();
            let (g, dups) = HeteroGraph::new(n, rels, triples.clone()).unwrap();
            let unique: HashSet<Triple> = triples.iter().copied().collect();
            prop_assert_eq!(g.num_triples(), unique.len());
            prop_assert_eq!(dups, triples.len() - unique.len());

            let g = g.augment(inv, sl);
            prop_assert!(g.index_is_consistent());
            for i in 0..g.num_nodes() {
                let expected: Vec<RelId> = (0..g.num_relations())
                    .filter(|&rel| !g.neighbors(i, rel).unwrap().is_empty())
                    .collect();
                prop_assert_eq!(g.relations_of(i).unwrap(), expected);
                for rel in 0..g.num_relations() {
                    let mut tails: Vec<NodeId> = g.triples().iter()
                        .filter(|t| t.head == i && t.rel == rel).map(|t| t.tail).collect();
                    tails.sort_unstable();
                    prop_assert_eq!(g.neighbors(i, rel).unwrap(), tails.as_slice());
                }
            }
        }

        #[test]
        fn inverse_at_most_doubles((n, r, raw) in arb_triples()) {
            let triples: Vec<Triple> = raw.iter().map(|&(h, rel, t)| Triple::new(h, rel, t)).collect();
            let rels = (0..r).map(|k| format!("r{}", k)).collect();
            let (g, _) = HeteroGraph::new(n, rels, triples).unwrap();
            let a = g.augment(true, false);
            prop_assert_eq!(a.num_triples(), 2 * g.num_triples());
        }
    }
}
