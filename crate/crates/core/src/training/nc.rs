use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{train_step, Adam, EpochMetrics, Model, TrainConfig, TrainError, LOG_FLOOR};
use crate::diffnum::{softmax_in_place, ParamSet, Tape, Tensor, Var};
use crate::evalkit::accuracy;
use crate::exec::Execution;
use crate::hetgraph::{HeteroGraph, NodeId, NodeLabels, NodeSplit};
use crate::layer::{stack_forward, AttentionTrace, DropoutCtx, ForwardCtx, LayerConfig, LayerParams, LayerStack};

pub struct NcData<'a> {
    /// Message-passing graph, already augmented as desired.
    pub graph: &'a HeteroGraph,
    pub labels: &'a NodeLabels,
    pub split: &'a NodeSplit,
}

#[derive(Debug, Clone)]
pub struct NcRun {
    pub model: LayerStack,
    pub history: Vec<EpochMetrics>,
    /// Epoch whose parameters were kept (the last one unless early stopping
    /// restored an earlier one).
    pub best_epoch: usize,
}

fn layer_configs(cfg: &TrainConfig, num_nodes: usize, num_relations: usize, num_classes: usize) -> Vec<LayerConfig> {
    (0..cfg.num_layers)
        .map(|l| {
            let d_in = if l == 0 { num_nodes } else { cfg.hidden_units };
            let d_out = if l + 1 == cfg.num_layers { num_classes } else { cfg.hidden_units };
            LayerConfig {
                num_bases: cfg.num_bases,
                leaky_slope: cfg.leaky_slope,
                variant: cfg.variant,
                input_projection: cfg.input_projection,
                // The softmax is the output layer's activation.
                output_relu: l + 1 < cfg.num_layers,
                ..LayerConfig::new(d_in, d_out, num_relations)
            }
        })
        .collect()
}

/// One-hot inputs, `num_layers` layers, `num_classes` outputs.
pub fn build_nc_model(
    cfg: &TrainConfig,
    num_nodes: usize,
    num_relations: usize,
    num_classes: usize,
    rng: &mut ChaCha8Rng,
) -> Result<LayerStack, TrainError> {
    let layers = layer_configs(cfg, num_nodes, num_relations, num_classes)
        .into_iter()
        .map(|c| LayerParams::init(c, rng))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(LayerStack::new(layers)?)
}

pub fn nc_model_from_param_set(
    cfg: &TrainConfig,
    num_nodes: usize,
    num_relations: usize,
    num_classes: usize,
    set: &ParamSet,
) -> Result<LayerStack, TrainError> {
    let mut expected = 0;
    let mut layers = Vec::new();
    for (l, c) in layer_configs(cfg, num_nodes, num_relations, num_classes).into_iter().enumerate() {
        let layer = LayerParams::from_param_set(c, &set.strip_prefix(&format!("layer{}.", l)))?;
        expected += layer.visit().len();
        layers.push(layer);
    }
    if expected != set.len() {
        return Err(TrainError::Config(format!("checkpoint has {} tensors, model expects {}", set.len(), expected)));
    }
    Ok(LayerStack::new(layers)?)
}

/// `-Σ_{i ∈ nodes} ln probs[i, label(i)]`, with probabilities floored at
/// [`LOG_FLOOR`].
pub fn nc_loss(tape: &mut Tape, probs: Var, labels: &NodeLabels, nodes: &[NodeId]) -> Result<Var, TrainError> {
    let k = labels.num_classes();
    let p = tape.value(probs);
    if p.ndim() != 2 || p.cols() != k {
        return Err(TrainError::Config(format!("probabilities have shape {:?}, expected K = {} columns", p.shape(), k)));
    }
    if nodes.is_empty() {
        return Err(TrainError::Config("no labeled training nodes".into()));
    }
    let mut targets = vec![0.0; nodes.len() * k];
    for (row, &i) in nodes.iter().enumerate() {
        let c = labels.label(i).ok_or_else(|| TrainError::Config(format!("training node {} has no label", i)))?;
        if p.get2(i, c) < LOG_FLOOR {
            warn!("node {} assigns probability {:e} to its label; clamped at {:e}", i, p.get2(i, c), LOG_FLOOR);
        }
        targets[row * k + c] = 1.0;
    }
    let picked = tape.gather_rows(probs, nodes)?;
    let clamped = tape.clamp_min(picked, LOG_FLOOR)?;
    let logs = tape.log(clamped)?;
    let t = tape.constant(Tensor::matrix(nodes.len(), k, targets)?);
    let terms = tape.mul(logs, t)?;
    let total = tape.sum(terms)?;
    Ok(tape.scale(total, -1.0)?)
}

/// Node-classification loss on the training nodes of `data`, with the
/// model's tensors supplied as `leaves` in [`Model::named_tensors`] order.
pub fn nc_objective(
    tape: &mut Tape,
    model: &LayerStack,
    leaves: &[Var],
    data: &NcData<'_>,
    ctx: &mut ForwardCtx<'_>,
) -> Result<Var, TrainError> {
    let bound = model.bind_vars(tape, leaves)?;
    let x = tape.constant(Tensor::identity(data.graph.num_nodes()));
    let (out, _) = stack_forward(tape, &bound, x, data.graph, ctx)?;
    let probs = tape.softmax(out)?;
    nc_loss(tape, probs, data.labels, &data.split.train)
}

/// Class probabilities (row softmax of the final layer) and attention traces.
pub fn predict_nc(model: &LayerStack, graph: &HeteroGraph, exec: Execution) -> Result<(Tensor, Vec<AttentionTrace>), TrainError> {
    let (mut out, traces) = model.forward(None, graph, exec)?;
    let k = out.cols();
    for row in out.data_mut().chunks_mut(k) {
        softmax_in_place(row);
    }
    Ok((out, traces))
}

/// Full-batch training from the seed in `cfg`. `on_epoch` sees every row of
/// the metrics history as it is produced.
pub fn train_nc(
    cfg: &TrainConfig,
    data: &NcData<'_>,
    exec: Execution,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<NcRun, TrainError> {
    cfg.check()?;
    let (graph, labels, split) = (data.graph, data.labels, data.split);
    if labels.num_nodes() != graph.num_nodes() {
        return Err(TrainError::Config(format!(
            "labels cover {} nodes but the graph has {}",
            labels.num_nodes(),
            graph.num_nodes()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = build_nc_model(cfg, graph.num_nodes(), graph.num_relations(), labels.num_classes(), &mut rng)?;
    let mut opt = Adam::new(cfg.lr);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, LayerStack)> = None;
    let mut since_best = 0;

    for epoch in 1..=cfg.epochs {
        let (loss, ()) = train_step(&mut model, &mut opt, cfg.l2_penalty, epoch, |tape, m| {
            let leaves: Vec<Var> = m.named_tensors().into_iter().map(|(_, t)| tape.param(t.clone())).collect();
            let dropout = if cfg.dropout > 0.0 { Some(DropoutCtx { rate: cfg.dropout, rng: &mut rng }) } else { None };
            let loss = nc_objective(tape, m, &leaves, data, &mut ForwardCtx { exec, dropout })?;
            Ok((loss, leaves, ()))
        })?;
        let (probs, _) = predict_nc(&model, graph, exec)?;
        let train_acc = accuracy(&probs, labels, &split.train).map_err(|e| TrainError::Config(e.to_string()))?;
        let val_metric = if split.valid.is_empty() {
            None
        } else {
            Some(accuracy(&probs, labels, &split.valid).map_err(|e| TrainError::Config(e.to_string()))?)
        };
        let m = EpochMetrics { epoch, loss, train_acc, val_metric };
        on_epoch(&m);
        history.push(m);

        if let (true, Some(v)) = (cfg.patience > 0, val_metric) {
            if best.as_ref().is_none_or(|(b, _, _)| v > *b) {
                best = Some((v, epoch, model.clone()));
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= cfg.patience {
                    break;
                }
            }
        }
    }
    let (model, best_epoch) = match best {
        Some((_, e, m)) => (m, e),
        None => (model, history.len()),
    };
    Ok(NcRun { model, history, best_epoch })
}
