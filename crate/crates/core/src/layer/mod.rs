//! The bi-level relational attention layer and its ablation variants.
//!
//! For a node `i` with incident relations `R_i`:
//!
//! * node level, per `r ∈ R_i`:
//!   `e_ij = LeakyReLU(a_r · [h_i ‖ h_j])`, `γ = softmax_j(e)` over `N_i^r`,
//!   `z_r = Σ_j γ_j h_j`;
//! * relation level:
//!   `q_r, k_r, v_r = W1_r z_r, W2_r z_r, W3_r z_r`,
//!   `ψ[r, r'] = softmax_{r'}(q_r · k_r')`,
//!   `δ_r = ReLU(Σ_r' ψ[r, r'] v_r' + W_self h_i)`,
//!   `h_i' = Σ_r δ_r`.
//!
//! The self term is added inside every `δ_r`, so it is counted `|R_i|`
//! times in the output. Nodes with `R_i = ∅` output zeros.

mod node;
mod params;
mod trace;


pub use node::{apply_layer, layer_forward, node_attention, relation_attention, DropoutCtx, ForwardCtx};
pub use params::{BoundLayer, LayerConfig, LayerParams, RelationMatrices, Variant};
pub use trace::{export_json, AttentionTrace, NodeTrace};

use crate::diffnum::{DiffError, Tape, Tensor, Var};
use crate::exec::Execution;
use crate::hetgraph::{GraphError, HeteroGraph};

#[derive(Debug, thiserror::Error)]
pub enum LayerError {
    #[error("layer configuration: {0}")]
    Config(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// `L` stacked layers; layer `l`'s output feeds layer `l + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerStack {
    layers: Vec<LayerParams>,
}

impl LayerStack {
    pub fn new(layers: Vec<LayerParams>) -> Result<Self, LayerError> {
        if layers.is_empty() {
            return Err(LayerError::Config("a stack needs at least one layer".into()));
        }
        for (l, pair) in layers.windows(2).enumerate() {
            if pair[0].config.d_out != pair[1].config.d_in {
                return Err(LayerError::Config(format!(
                    "layer {} outputs {} features but layer {} expects {}",
                    l,
                    pair[0].config.d_out,
                    l + 1,
                    pair[1].config.d_in
                )));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerParams] {
        &mut self.layers
    }

    pub fn d_in(&self) -> usize {
        self.layers[0].config.d_in
    }

    pub fn d_out(&self) -> usize {
        self.layers.last().unwrap().config.d_out
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<Vec<BoundLayer>, LayerError> {
        self.layers.iter().map(|l| l.bind(tape, trainable)).collect()
    }

    /// Binds from caller-owned leaf vars: every layer's tensors in
    /// [`LayerParams::visit`] order, layer by layer.
    pub fn bind_vars(&self, tape: &mut Tape, leaves: &[Var]) -> Result<Vec<BoundLayer>, LayerError> {
        let mut out = Vec::with_capacity(self.layers.len());
        let mut at = 0;
        for l in &self.layers {
            let n = l.visit().len();
            let slice = leaves
                .get(at..at + n)
                .ok_or_else(|| LayerError::Config(format!("{} leaves are too few for the stack", leaves.len())))?;
            out.push(l.bind_vars(tape, slice)?);
            at += n;
        }
        if at != leaves.len() {
            return Err(LayerError::Config(format!("{} leaves for {} stack tensors", leaves.len(), at)));
        }
        Ok(out)
    }

    pub fn num_tensors(&self) -> usize {
        self.layers.iter().map(|l| l.visit().len()).sum()
    }

    /// Inference: returns the final embeddings and one trace per layer.
    /// `x0 = None` uses one-hot node features.
    pub fn forward(
        &self,
        x0: Option<&Tensor>,
        graph: &HeteroGraph,
        exec: Execution,
    ) -> Result<(Tensor, Vec<AttentionTrace>), LayerError> {
        let owned;
        let x0 = match x0 {
            Some(x) => x,
            None => {
                owned = Tensor::identity(graph.num_nodes());
                &owned
            }
        };
        let mut h = x0.clone();
        let mut traces = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (next, trace) = layer_forward(layer, &h, graph, exec)?;
            h = next;
            traces.push(trace);
        }
        Ok((h, traces))
    }
}

/// Runs bound layers on the tape in sequence.
pub fn stack_forward(
    tape: &mut Tape,
    layers: &[BoundLayer],
    x0: Var,
    graph: &HeteroGraph,
    ctx: &mut ForwardCtx<'_>,
) -> Result<(Var, Vec<AttentionTrace>), LayerError> {
    let mut h = x0;
    let mut traces = Vec::with_capacity(layers.len());
    for layer in layers {
        let (next, trace) = apply_layer(tape, layer, h, graph, ctx)?;
        h = next;
        traces.push(trace);
    }
    Ok((h, traces))
}
