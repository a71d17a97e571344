use serde::{Deserialize, Serialize};

use crate::hetgraph::{HeteroGraph, NodeId, RelId};

/// Attention weights recorded for one node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeTrace {
    pub node: NodeId,
    /// `R_i`, sorted.
    pub relations: Vec<RelId>,
    /// `N_i^r` for each relation in `relations`.
    pub neighbors: Vec<Vec<NodeId>>,
    /// `γ` over `N_i^r` for each relation in `relations`.
    pub gamma: Vec<Vec<f64>>,
    /// `ψ` rows, `relations.len()` square; absent for variants without
    /// relation-level attention.
    pub psi: Option<Vec<Vec<f64>>>,
}

/// Per-node attention of one layer. Nodes with `R_i = ∅` are omitted.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AttentionTrace {
    pub nodes: Vec<NodeTrace>,
}

#[derive(Serialize)]
struct GammaRecord<'a> {
    node: NodeId,
    relation: RelId,
    neighbors: &'a [NodeId],
    gamma: &'a [f64],
}

#[derive(Serialize)]
struct PsiRecord<'a> {
    node: NodeId,
    relations: &'a [RelId],
    psi: &'a [Vec<f64>],
}

#[derive(Serialize)]
struct RelationName<'a> {
    id: RelId,
    name: &'a str,
}

#[derive(Serialize)]
struct LayerExport<'a> {
    layer: usize,
    gamma: Vec<GammaRecord<'a>>,
    psi: Vec<PsiRecord<'a>>,
}

#[derive(Serialize)]
struct Export<'a> {
    relations: Vec<RelationName<'a>>,
    layers: Vec<LayerExport<'a>>,
}

impl AttentionTrace {
    pub fn node(&self, i: NodeId) -> Option<&NodeTrace> {
        self.nodes.iter().find(|t| t.node == i)
    }

    /// Largest `|Σ γ − 1|` and `|Σ ψ_row − 1|` over the trace.
    pub fn max_normalization_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for t in &self.nodes {
            for g in &t.gamma {
                worst = worst.max((g.iter().sum::<f64>() - 1.0).abs());
            }
            for row in t.psi.iter().flatten() {
                worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
            }
        }
        worst
    }
}

/// JSON document with `γ` records keyed by `(node, relation)`, `ψ` records
/// keyed by node, and the relation id → name table.
pub fn export_json(traces: &[AttentionTrace], graph: &HeteroGraph) -> serde_json::Value {
    let relations =
        (0..graph.num_relations()).map(|r| RelationName { id: r, name: graph.relation_name(r) }).collect();
    let layers = traces
        .iter()
        .enumerate()
        .map(|(l, tr)| LayerExport {
            layer: l,
            gamma: tr
                .nodes
                .iter()
                .flat_map(|t| {
                    t.relations.iter().enumerate().map(move |(k, &r)| GammaRecord {
                        node: t.node,
                        relation: r,
                        neighbors: &t.neighbors[k],
                        gamma: &t.gamma[k],
                    })
                })
                .collect(),
            psi: tr
                .nodes
                .iter()
                .filter_map(|t| t.psi.as_ref().map(|p| PsiRecord { node: t.node, relations: &t.relations, psi: p }))
                .collect(),
        })
        .collect();
    serde_json::to_value(Export { relations, layers }).expect("attention export is serializable")
}
