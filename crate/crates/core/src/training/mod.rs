//! Losses, the Adam optimizer and the two training pipelines.

mod config;
mod lp;
mod nc;
mod sampling;

pub use config::{LpMode, Task, TrainConfig};
pub use lp::{lp_loss, lp_objective, message_graph, train_lp, LpData, LpModel, LpRun, LpScorer};
pub use nc::{build_nc_model, nc_loss, nc_model_from_param_set, nc_objective, predict_nc, train_nc, NcData, NcRun};
pub use sampling::{negative_sample, NegativeSampler, Slot, TripleBatch, MAX_RETRIES};

use std::fmt::Write as _;

use crate::decoders::DecoderError;
use crate::diffnum::{DiffError, ParamSet, Tape, Tensor, Var};
use crate::hetgraph::{GraphError, Triple};
use crate::layer::{LayerError, LayerStack};

/// Floor applied inside `log` by both losses.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("training configuration: {0}")]
    Config(String),
    #[error("numeric failure at epoch {epoch} (parameter {parameter}): {detail}")]
    NumericFailure { epoch: usize, parameter: String, detail: String },
    #[error("no valid corruption of {triple:?} after {retries} retries")]
    SamplingExhausted { triple: Triple, retries: usize },
    #[error(transparent)]
    Layer(#[from] LayerError),
    #[error(transparent)]
    Decoder(#[from] DecoderError),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

impl TrainError {
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            TrainError::NumericFailure { .. }
                | TrainError::Diff(DiffError::NonFinite { .. })
                | TrainError::Layer(LayerError::Diff(DiffError::NonFinite { .. }))
                | TrainError::Decoder(DecoderError::Diff(DiffError::NonFinite { .. }))
        )
    }
}

/// A set of named trainable tensors. `tensors_mut` yields the tensors in
/// the same order as `named_tensors`.
pub trait Model {
    fn named_tensors(&self) -> Vec<(String, &Tensor)>;
    fn tensors_mut(&mut self) -> Vec<&mut Tensor>;

    fn to_param_set(&self) -> ParamSet {
        let mut set = ParamSet::new();
        for (n, t) in self.named_tensors() {
            set.insert(n, t.clone());
        }
        set
    }
}

impl Model for ParamSet {
    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        self.iter().map(|(n, t)| (n.to_string(), t)).collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.values_mut().collect()
    }
}

impl Model for LayerStack {
    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (l, layer) in self.layers().iter().enumerate() {
            out.extend(layer.visit().into_iter().map(|(n, t)| (format!("layer{}.{}", l, n), t)));
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers_mut().iter_mut().flat_map(|l| l.visit_mut()).collect()
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: Vec::new(), v: Vec::new() }
    }

    /// One update; a missing gradient counts as zero.
    pub fn step(&mut self, params: Vec<&mut Tensor>, grads: &[Option<Tensor>]) {
        assert_eq!(params.len(), grads.len(), "one gradient slot per parameter");
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (k, p) in params.into_iter().enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            let g = grads[k].as_ref().map(|g| g.data());
            for (idx, x) in p.data_mut().iter_mut().enumerate() {
                let gi = g.map_or(0.0, |g| g[idx]);
                m[idx] = self.beta1 * m[idx] + (1.0 - self.beta1) * gi;
                v[idx] = self.beta2 * v[idx] + (1.0 - self.beta2) * gi * gi;
                let mhat = m[idx] / c1;
                let vhat = v[idx] / c2;
                *x -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

fn largest_parameter<M: Model>(model: &M) -> String {
    model
        .named_tensors()
        .into_iter()
        .map(|(n, t)| (n, t.data().iter().fold(0.0f64, |a, x| if x.is_finite() { a.max(x.abs()) } else { f64::INFINITY })))
        .fold((String::from("?"), -1.0), |best, cur| if cur.1 > best.1 { cur } else { best })
        .0
}

fn as_numeric<M: Model>(e: TrainError, epoch: usize, model: &M) -> TrainError {
    if e.is_numeric() && !matches!(e, TrainError::NumericFailure { .. }) {
        TrainError::NumericFailure { epoch, parameter: largest_parameter(model), detail: e.to_string() }
    } else {
        e
    }
}

/// One optimization step. `build` records the data loss on a fresh tape and
/// returns it with the model's leaf vars (in `named_tensors` order) and any
/// auxiliary output. The L2 term `λ‖θ‖²` is added here.
pub fn train_step<M, A, F>(model: &mut M, opt: &mut Adam, l2: f64, epoch: usize, build: F) -> Result<(f64, A), TrainError>
where
    M: Model,
    F: FnOnce(&mut Tape, &M) -> Result<(Var, Vec<Var>, A), TrainError>,
{
    let mut tape = Tape::new();
    let run = |tape: &mut Tape, model: &M| -> Result<(Var, Vec<Var>, A), TrainError> {
        let (loss, leaves, aux) = build(tape, model)?;
        if leaves.len() != model.named_tensors().len() {
            return Err(TrainError::Config(format!(
                "model exposes {} tensors but {} leaves were bound",
                model.named_tensors().len(),
                leaves.len()
            )));
        }
        if l2 == 0.0 {
            return Ok((loss, leaves, aux));
        }
        let mut total = loss;
        for &v in &leaves {
            let sq = tape.mul(v, v)?;
            let s = tape.sum(sq)?;
            let s = tape.scale(s, l2)?;
            total = tape.add(total, s)?;
        }
        Ok((total, leaves, aux))
    };
    let (loss, leaves, aux) = run(&mut tape, model).map_err(|e| as_numeric(e, epoch, model))?;
    let value = tape.value(loss).item();
    let mut grads = tape.backward(loss).map_err(|e| as_numeric(e.into(), epoch, model))?;
    let grads: Vec<Option<Tensor>> = leaves.iter().map(|&v| grads.take(v)).collect();
    let names: Vec<String> = model.named_tensors().into_iter().map(|(n, _)| n).collect();
    for (name, g) in names.iter().zip(&grads) {
        if g.as_ref().is_some_and(|g| !g.all_finite()) {
            return Err(TrainError::NumericFailure { epoch, parameter: name.clone(), detail: "non-finite gradient".into() });
        }
    }
    opt.step(model.tensors_mut(), &grads);
    for (name, t) in model.named_tensors() {
        if !t.all_finite() {
            return Err(TrainError::NumericFailure { epoch, parameter: name, detail: "non-finite value after update".into() });
        }
    }
    Ok((value, aux))
}

/// Runs `cfg.epochs` Adam steps on `loss_fn` and returns the loss curve.
pub fn optimize<M, F>(model: &mut M, cfg: &TrainConfig, mut loss_fn: F) -> Result<Vec<f64>, TrainError>
where
    M: Model,
    F: FnMut(&mut Tape, &M, usize) -> Result<(Var, Vec<Var>), TrainError>,
{
    let mut opt = Adam::new(cfg.lr);
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let (loss, ()) = train_step(model, &mut opt, cfg.l2_penalty, epoch, |tape, m| {
            let (l, leaves) = loss_fn(tape, m, epoch)?;
            Ok((l, leaves, ()))
        })?;
        curve.push(loss);
    }
    Ok(curve)
}

/// One row of the per-epoch metrics file.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub train_acc: f64,
    pub val_metric: Option<f64>,
}

pub const METRICS_HEADER: &str = "epoch,loss,train_acc,val_metric";

impl EpochMetrics {
    pub fn csv_row(&self) -> String {
        let val = self.val_metric.map(|v| v.to_string()).unwrap_or_default();
        format!("{},{},{},{}", self.epoch, self.loss, self.train_acc, val)
    }
}

pub fn metrics_csv(history: &[EpochMetrics]) -> String {
    let mut s = String::new();
    writeln!(s, "{}", METRICS_HEADER).unwrap();
    for m in history {
        writeln!(s, "{}", m.csv_row()).unwrap();
    }
    s
}
