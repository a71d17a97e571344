//! Per-node layer programs.
//!
//! Each node's output depends only on its own row, its out-neighbors' rows
//! and the parameters of its incident relations. The layer therefore runs as
//! one custom op on the caller's tape: every node is evaluated on a private
//! tape (in parallel when enabled), and the backward pass replays the private
//! tapes and reduces their gradients in node order.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::{BoundLayer, LayerConfig, LayerParams, Variant};
use super::trace::{AttentionTrace, NodeTrace};
use super::LayerError;
use crate::diffnum::{CustomOp, DiffError, Tape, Tensor, Var};
use crate::exec::Execution;
use crate::hetgraph::{HeteroGraph, NodeId, RelId};

/// Training-time dropout: inverted-scaling masks on the input features and
/// on the node-level attention weights.
pub struct DropoutCtx<'a> {
    pub rate: f64,
    pub rng: &'a mut ChaCha8Rng,
}

pub struct ForwardCtx<'a> {
    pub exec: Execution,
    pub dropout: Option<DropoutCtx<'a>>,
}

impl ForwardCtx<'_> {
    pub fn eval(exec: Execution) -> Self {
        Self { exec, dropout: None }
    }
}

fn dropout_mask(rng: &mut ChaCha8Rng, rate: f64, n: usize) -> Vec<f64> {
    let keep = 1.0 - rate;
    (0..n).map(|_| if rng.gen::<f64>() < rate { 0.0 } else { 1.0 / keep }).collect()
}

/// Node-level attention on a tape. Returns `(γ, z)`; `γ` is the undropped
/// distribution, `z` uses the dropped weights when a mask is given.
fn node_level(
    tape: &mut Tape,
    attention: Option<Var>,
    projection: Option<Var>,
    h_i: Var,
    h_js: &[Var],
    slope: f64,
    mask: Option<&[f64]>,
) -> Result<(Var, Var), DiffError> {
    let (h_i, h_js) = match projection {
        Some(p) => {
            let hi = tape.matmul(p, h_i)?;
            let hjs = h_js.iter().map(|&hj| tape.matmul(p, hj)).collect::<Result<Vec<_>, _>>()?;
            (hi, hjs)
        }
        None => (h_i, h_js.to_vec()),
    };
    let n = h_js.len();
    let gamma = match attention {
        Some(a) => {
            let pairs = h_js.iter().map(|&hj| tape.concat(&[h_i, hj])).collect::<Result<Vec<_>, _>>()?;
            let pairs = tape.stack(&pairs)?;
            let logits = tape.matmul(pairs, a)?;
            let e = tape.leaky_relu(logits, slope)?;
            tape.softmax(e)?
        }
        None => tape.constant(Tensor::vector(vec![1.0 / n as f64; n])),
    };
    let weights = match mask {
        Some(m) => {
            let m = tape.constant(Tensor::vector(m.to_vec()));
            tape.mul(gamma, m)?
        }
        None => gamma,
    };
    let feats = tape.stack(&h_js)?;
    let feats_t = tape.transpose(feats)?;
    let z = tape.matmul(feats_t, weights)?;
    Ok((gamma, z))
}

/// Relation-level attention on a tape. Returns `(ψ, h_next)`; `relu`
/// switches the activation on each `δ`.
fn relation_level(
    tape: &mut Tape,
    zs: &[Var],
    query: &[Var],
    key: &[Var],
    value: &[Var],
    self_term: Var,
    relu: bool,
) -> Result<(Var, Var), DiffError> {
    let mut qs = Vec::with_capacity(zs.len());
    let mut ks = Vec::with_capacity(zs.len());
    let mut vs = Vec::with_capacity(zs.len());
    for (k, &z) in zs.iter().enumerate() {
        qs.push(tape.matmul(query[k], z)?);
        ks.push(tape.matmul(key[k], z)?);
        vs.push(tape.matmul(value[k], z)?);
    }
    let q = tape.stack(&qs)?;
    let k = tape.stack(&ks)?;
    let v = tape.stack(&vs)?;
    let kt = tape.transpose(k)?;
    let sim = tape.matmul(q, kt)?;
    let psi = tape.softmax(sim)?;
    let mixed = tape.matmul(psi, v)?;
    let selfs = tape.stack(&vec![self_term; zs.len()])?;
    let pre = tape.add(mixed, selfs)?;
    let delta = if relu { tape.relu(pre)? } else { pre };
    let out = tape.sum_axis(delta, 0)?;
    Ok((psi, out))
}

/// Where a private-tape leaf comes from.
#[derive(Debug, Clone, Copy)]
enum Source {
    /// Row of the layer input `h`.
    Row(NodeId),
    /// Input slot of the layer op (see [`Layout`]).
    Input(usize),
}

/// Slot offsets of the layer op's inputs; slot 0 is `h`.
#[derive(Debug, Clone)]
struct Layout {
    num_relations: usize,
    attention: Option<usize>,
    query: Option<usize>,
    key: Option<usize>,
    value: usize,
    w_self: usize,
    projection: Option<usize>,
}

impl Layout {
    fn inputs(bound: &BoundLayer, h: Var) -> (Self, Vec<Var>) {
        let nr = bound.config.num_relations;
        let mut inputs = vec![h];
        let push = |vs: &[Var], inputs: &mut Vec<Var>| {
            let start = inputs.len();
            inputs.extend_from_slice(vs);
            start
        };
        let attention = bound.attention.as_ref().map(|a| push(a, &mut inputs));
        let query = bound.query.as_ref().map(|q| push(q, &mut inputs));
        let key = bound.key.as_ref().map(|k| push(k, &mut inputs));
        let value = push(&bound.value, &mut inputs);
        let w_self = push(&[bound.w_self], &mut inputs);
        let projection = bound.projection.as_ref().map(|p| push(p, &mut inputs));
        (Self { num_relations: nr, attention, query, key, value, w_self, projection }, inputs)
    }
}

struct NodeRun {
    tape: Tape,
    out: Option<Var>,
    leaves: Vec<(Source, Var)>,
    trace: Option<NodeTrace>,
}

struct NodeBuilder<'a> {
    tape: Tape,
    leaves: Vec<(Source, Var)>,
    rows: HashMap<NodeId, Var>,
    slots: HashMap<usize, Var>,
    inputs: &'a [&'a Tensor],
    needs_grad: &'a [bool],
}

impl<'a> NodeBuilder<'a> {
    fn new(inputs: &'a [&'a Tensor], needs_grad: &'a [bool]) -> Self {
        Self { tape: Tape::new(), leaves: Vec::new(), rows: HashMap::new(), slots: HashMap::new(), inputs, needs_grad }
    }

    fn leaf(&mut self, src: Source, value: Tensor, grad: bool) -> Var {
        if grad {
            let v = self.tape.param(value);
            self.leaves.push((src, v));
            v
        } else {
            self.tape.constant(value)
        }
    }

    fn row(&mut self, j: NodeId) -> Var {
        if let Some(&v) = self.rows.get(&j) {
            return v;
        }
        let value = Tensor::vector(self.inputs[0].row(j).to_vec());
        let v = self.leaf(Source::Row(j), value, self.needs_grad[0]);
        self.rows.insert(j, v);
        v
    }

    fn slot(&mut self, k: usize) -> Var {
        if let Some(&v) = self.slots.get(&k) {
            return v;
        }
        let v = self.leaf(Source::Input(k), self.inputs[k].clone(), self.needs_grad[k]);
        self.slots.insert(k, v);
        v
    }
}

#[allow(clippy::too_many_arguments)]
fn run_node(
    i: NodeId,
    graph: &HeteroGraph,
    layout: &Layout,
    cfg: &LayerConfig,
    inputs: &[&Tensor],
    needs_grad: &[bool],
    masks: Option<&[Vec<f64>]>,
) -> Result<NodeRun, DiffError> {
    let (variant, slope, relu) = (cfg.variant, cfg.leaky_slope, cfg.output_relu);
    let act = |tape: &mut Tape, v: Var| if relu { tape.relu(v) } else { Ok(v) };
    let hoods = graph.neighborhoods(i);
    let mut b = NodeBuilder::new(inputs, needs_grad);
    let uses_self_alone = matches!(variant, Variant::NodeOnly | Variant::RgcnBaseline);
    if hoods.is_empty() && !uses_self_alone {
        return Ok(NodeRun { tape: b.tape, out: None, leaves: b.leaves, trace: None });
    }

    let h_i = b.row(i);
    let w_self = b.slot(layout.w_self);
    let self_term = b.tape.matmul(w_self, h_i)?;

    let mut zs = Vec::with_capacity(hoods.len());
    let mut gammas = Vec::with_capacity(hoods.len());
    let mut gamma_vars = Vec::with_capacity(hoods.len());
    for (k, (r, nbrs)) in hoods.iter().enumerate() {
        let h_js: Vec<Var> = nbrs.iter().map(|&j| b.row(j)).collect();
        let attention = if variant.uses_node_attention() {
            layout.attention.map(|s| b.slot(s + r))
        } else {
            None
        };
        let projection = layout.projection.map(|s| b.slot(s + r));
        let mask = masks.map(|m| m[k].as_slice());
        let (gamma, z) = node_level(&mut b.tape, attention, projection, h_i, &h_js, slope, mask)?;
        gamma_vars.push(gamma);
        zs.push(z);
    }
    for g in gamma_vars {
        gammas.push(b.tape.value(g).data().to_vec());
    }

    let rels: Vec<RelId> = hoods.iter().map(|(r, _)| *r).collect();
    let value: Vec<Var> = rels.iter().map(|r| b.slot(layout.value + r)).collect();
    let (out, psi) = match variant {
        Variant::Full | Variant::RelationOnly => {
            let (q, k) = (layout.query.expect("query weights"), layout.key.expect("key weights"));
            let query: Vec<Var> = rels.iter().map(|r| b.slot(q + r)).collect();
            let key: Vec<Var> = rels.iter().map(|r| b.slot(k + r)).collect();
            let (psi, out) = relation_level(&mut b.tape, &zs, &query, &key, &value, self_term, relu)?;
            let m = rels.len();
            let p = b.tape.value(psi);
            (out, Some((0..m).map(|r| p.row(r).to_vec()).collect()))
        }
        Variant::NodeOnly | Variant::RgcnBaseline => {
            let projected = zs
                .iter()
                .zip(&value)
                .map(|(&z, &w)| b.tape.matmul(w, z))
                .collect::<Result<Vec<_>, _>>()?;
            let out = match (variant, projected.is_empty()) {
                (_, true) => act(&mut b.tape, self_term)?,
                (Variant::NodeOnly, false) => {
                    let stacked = b.tape.stack(&projected)?;
                    let summed = b.tape.sum_axis(stacked, 0)?;
                    let s = act(&mut b.tape, self_term)?;
                    b.tape.add(summed, s)?
                }
                _ => {
                    let stacked = b.tape.stack(&projected)?;
                    let summed = b.tape.sum_axis(stacked, 0)?;
                    let pre = b.tape.add(summed, self_term)?;
                    act(&mut b.tape, pre)?
                }
            };
            (out, None)
        }
    };
    let trace = (!rels.is_empty()).then(|| NodeTrace {
        node: i,
        relations: rels,
        neighbors: hoods.iter().map(|(_, n)| n.clone()).collect(),
        gamma: gammas,
        psi,
    });
    Ok(NodeRun { tape: b.tape, out: Some(out), leaves: b.leaves, trace })
}

struct LayerOp {
    runs: Vec<NodeRun>,
    exec: Execution,
}

impl CustomOp for LayerOp {
    fn name(&self) -> &'static str {
        "brgcn_layer"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Result<Vec<Option<Tensor>>, DiffError> {
        let per_node = self.exec.map_range(self.runs.len(), |i| -> Result<Vec<(Source, Tensor)>, DiffError> {
            let run = &self.runs[i];
            let Some(out) = run.out else { return Ok(Vec::new()) };
            let seed = Tensor::vector(grad.row(i).to_vec());
            let mut grads = run.tape.backward_from(out, seed)?;
            Ok(run.leaves.iter().filter_map(|&(src, v)| grads.take(v).map(|g| (src, g))).collect())
        });
        let mut result: Vec<Option<Tensor>> = vec![None; inputs.len()];
        for contributions in per_node {
            for (src, g) in contributions? {
                match src {
                    Source::Row(j) => {
                        let acc = result[0].get_or_insert_with(|| Tensor::zeros(inputs[0].shape()));
                        let d = g.len();
                        for (a, x) in acc.data_mut()[j * d..(j + 1) * d].iter_mut().zip(g.data()) {
                            *a += x;
                        }
                    }
                    Source::Input(k) => match &mut result[k] {
                        Some(acc) => acc.add_assign(&g),
                        slot @ None => *slot = Some(g),
                    },
                }
            }
        }
        Ok(result)
    }
}

/// Applies one layer to `h` (`N × d_in`) on the tape.
pub fn apply_layer(
    tape: &mut Tape,
    bound: &BoundLayer,
    h: Var,
    graph: &HeteroGraph,
    ctx: &mut ForwardCtx<'_>,
) -> Result<(Var, AttentionTrace), LayerError> {
    let cfg = &bound.config;
    let n = graph.num_nodes();
    if tape.value(h).shape() != [n, cfg.d_in] {
        return Err(LayerError::Precondition(format!(
            "features have shape {:?}, expected [{}, {}]",
            tape.value(h).shape(),
            n,
            cfg.d_in
        )));
    }
    if graph.num_relations() > cfg.num_relations {
        return Err(LayerError::Config(format!(
            "graph has {} relations but the layer was built for {}",
            graph.num_relations(),
            cfg.num_relations
        )));
    }

    let mut gamma_masks: Option<Vec<Vec<Vec<f64>>>> = None;
    let h = match ctx.dropout.as_mut() {
        Some(d) if d.rate > 0.0 => {
            let feat_mask = dropout_mask(d.rng, d.rate, n * cfg.d_in);
            let masks = (0..n)
                .map(|i| graph.neighborhoods(i).iter().map(|(_, nb)| dropout_mask(d.rng, d.rate, nb.len())).collect())
                .collect();
            gamma_masks = Some(masks);
            let m = tape.constant(Tensor::new(vec![n, cfg.d_in], feat_mask)?);
            tape.mul(h, m)?
        }
        _ => h,
    };

    let (layout, input_vars) = Layout::inputs(bound, h);
    let needs_grad: Vec<bool> = input_vars.iter().map(|&v| tape.requires_grad(v)).collect();
    let any_grad = needs_grad.iter().any(|&g| g);
    let (runs, output) = {
        let inputs: Vec<&Tensor> = input_vars.iter().map(|&v| tape.value(v)).collect();
        let results = ctx.exec.map_range(n, |i| {
            let masks = gamma_masks.as_ref().map(|m| m[i].as_slice());
            run_node(i, graph, &layout, cfg, &inputs, &needs_grad, masks)
        });
        let runs = results.into_iter().collect::<Result<Vec<_>, _>>()?;
        let mut out = Vec::with_capacity(n * cfg.d_out);
        for run in &runs {
            match run.out {
                Some(v) => out.extend_from_slice(run.tape.value(v).data()),
                None => out.extend(std::iter::repeat_n(0.0, cfg.d_out)),
            }
        }
        (runs, Tensor::new(vec![n, cfg.d_out], out)?)
    };
    debug_assert_eq!(layout.num_relations, cfg.num_relations);

    let trace = AttentionTrace { nodes: runs.iter().filter_map(|r| r.trace.clone()).collect() };
    let out = if any_grad {
        tape.custom(&input_vars, output, Box::new(LayerOp { runs, exec: ctx.exec }))?
    } else {
        tape.constant(output)
    };
    Ok((out, trace))
}

/// Inference for one layer on plain tensors.
pub fn layer_forward(
    params: &LayerParams,
    h: &Tensor,
    graph: &HeteroGraph,
    exec: Execution,
) -> Result<(Tensor, AttentionTrace), LayerError> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, false)?;
    let hv = tape.constant(h.clone());
    let (out, trace) = apply_layer(&mut tape, &bound, hv, graph, &mut ForwardCtx::eval(exec))?;
    Ok((tape.value(out).clone(), trace))
}

/// Node-level attention of node `i` under relation `r`: returns `(γ, z_i^r)`.
/// Uniform weights for variants without node-level attention.
pub fn node_attention(
    params: &LayerParams,
    h: &Tensor,
    graph: &HeteroGraph,
    i: NodeId,
    r: RelId,
) -> Result<(Vec<f64>, Vec<f64>), LayerError> {
    let nbrs = graph.neighbors(i, r)?;
    if nbrs.is_empty() {
        return Err(LayerError::Precondition(format!("node {} has no neighbors under relation {}", i, r)));
    }
    let mut tape = Tape::new();
    let h_i = tape.constant(Tensor::vector(h.row(i).to_vec()));
    let h_js: Vec<Var> = nbrs.iter().map(|&j| tape.constant(Tensor::vector(h.row(j).to_vec()))).collect();
    let attention = params.attention.as_ref().map(|a| tape.constant(a[r].clone()));
    let projection = params.projection.as_ref().map(|p| tape.constant(p[r].clone()));
    let (gamma, z) = node_level(&mut tape, attention, projection, h_i, &h_js, params.config.leaky_slope, None)?;
    Ok((tape.value(gamma).data().to_vec(), tape.value(z).data().to_vec()))
}

/// Relation-level attention for one node given its relation-specific
/// embeddings `z` (in `R_i` order): returns `(ψ rows, h_next)`.
pub fn relation_attention(
    params: &LayerParams,
    z: &[(RelId, Vec<f64>)],
    h_i: &[f64],
) -> Result<(Vec<Vec<f64>>, Vec<f64>), LayerError> {
    if z.is_empty() {
        return Err(LayerError::Precondition("relation attention needs at least one relation".into()));
    }
    let (Some(q), Some(k)) = (&params.query, &params.key) else {
        return Err(LayerError::Config(format!("variant {} has no relation-level attention", params.config.variant)));
    };
    let (wq, wk, wv) = (params.materialize(q), params.materialize(k), params.materialize(&params.value));
    let mut tape = Tape::new();
    let vars = |ws: &[Tensor], tape: &mut Tape| -> Vec<Var> { z.iter().map(|(r, _)| tape.constant(ws[*r].clone())).collect() };
    let (query, key, value) = (vars(&wq, &mut tape), vars(&wk, &mut tape), vars(&wv, &mut tape));
    let zs: Vec<Var> = z.iter().map(|(_, v)| tape.constant(Tensor::vector(v.clone()))).collect();
    let hv = tape.constant(Tensor::vector(h_i.to_vec()));
    let w_self = tape.constant(params.w_self.clone());
    let self_term = tape.matmul(w_self, hv)?;
    let (psi, out) = relation_level(&mut tape, &zs, &query, &key, &value, self_term, params.config.output_relu)?;
    let p = tape.value(psi);
    let rows = (0..z.len()).map(|r| p.row(r).to_vec()).collect();
    Ok((rows, tape.value(out).data().to_vec()))
}
