use std::collections::HashSet;

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{train_step, Adam, EpochMetrics, LpMode, Model, NegativeSampler, TrainConfig, TrainError, TripleBatch, LOG_FLOOR};
use crate::decoders::{self, score_on_tape, uniform_embeddings, DecoderKind};
use crate::diffnum::{ParamSet, Tape, Tensor, Var};
use crate::evalkit::rank_triples;
use crate::exec::Execution;
use crate::hetgraph::{HeteroGraph, Triple, TripleSplit};
use crate::layer::{stack_forward, DropoutCtx, ForwardCtx, LayerConfig, LayerParams, LayerStack};

/// Graph the encoder propagates over: the training triples of `graph`,
/// optionally with inverse and self-loop relations.
pub fn message_graph(graph: &HeteroGraph, train: &[Triple], add_inverse: bool, self_loop: bool) -> Result<HeteroGraph, TrainError> {
    Ok(graph.with_triples(train.to_vec())?.augment(add_inverse, self_loop))
}

pub struct LpData<'a> {
    /// Message-passing graph over the entities (see [`message_graph`]).
    pub graph: &'a HeteroGraph,
    /// Relations scored by the decoder; triples in `split` use ids below it.
    pub num_relations: usize,
    pub split: &'a TripleSplit,
}

/// Encoder with relation embeddings, standalone entity/relation embeddings,
/// or both.
#[derive(Debug, Clone, PartialEq)]
pub struct LpModel {
    pub kind: DecoderKind,
    pub mode: LpMode,
    pub beta: f64,
    pub encoder: Option<LayerStack>,
    pub encoder_relations: Option<Tensor>,
    pub entities: Option<Tensor>,
    pub embedding_relations: Option<Tensor>,
}

fn encoder_configs(cfg: &TrainConfig, num_entities: usize, message_relations: usize) -> Vec<LayerConfig> {
    (0..cfg.encoder_layers)
        .map(|l| {
            let d_in = if l == 0 { num_entities } else { cfg.hidden_units };
            let d_out = if l + 1 == cfg.encoder_layers { cfg.embedding_dim } else { cfg.hidden_units };
            LayerConfig {
                num_bases: cfg.num_bases,
                leaky_slope: cfg.leaky_slope,
                variant: cfg.variant,
                input_projection: cfg.input_projection,
                ..LayerConfig::new(d_in, d_out, message_relations)
            }
        })
        .collect()
}

fn uses_encoder(mode: LpMode) -> bool {
    mode != LpMode::Embedding
}

fn uses_embedding(mode: LpMode) -> bool {
    mode != LpMode::Encoder
}

impl LpModel {
    pub fn init(
        cfg: &TrainConfig,
        num_entities: usize,
        message_relations: usize,
        num_relations: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, TrainError> {
        let d = cfg.embedding_dim;
        cfg.decoder.check_width(d)?;
        let (mut encoder, mut encoder_relations, mut entities, mut embedding_relations) = (None, None, None, None);
        if uses_encoder(cfg.lp_mode) {
            let layers = encoder_configs(cfg, num_entities, message_relations)
                .into_iter()
                .map(|c| LayerParams::init(c, rng))
                .collect::<Result<Vec<_>, _>>()?;
            encoder = Some(LayerStack::new(layers)?);
            encoder_relations = Some(uniform_embeddings(rng, num_relations, d));
        }
        if uses_embedding(cfg.lp_mode) {
            entities = Some(uniform_embeddings(rng, num_entities, d));
            embedding_relations = Some(uniform_embeddings(rng, num_relations, d));
        }
        Ok(Self { kind: cfg.decoder, mode: cfg.lp_mode, beta: cfg.beta, encoder, encoder_relations, entities, embedding_relations })
    }

    pub fn from_param_set(
        cfg: &TrainConfig,
        num_entities: usize,
        message_relations: usize,
        num_relations: usize,
        set: &ParamSet,
    ) -> Result<Self, TrainError> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = Self::init(cfg, num_entities, message_relations, num_relations, &mut rng)?;
        if let Some(enc) = &mut model.encoder {
            let loaded = encoder_configs(cfg, num_entities, message_relations)
                .into_iter()
                .enumerate()
                .map(|(l, c)| LayerParams::from_param_set(c, &set.strip_prefix(&format!("encoder.layer{}.", l))))
                .collect::<Result<Vec<_>, _>>()?;
            *enc = LayerStack::new(loaded)?;
        }
        let names: Vec<String> = model.named_tensors().into_iter().map(|(n, _)| n).collect();
        for (name, slot) in names.iter().zip(model.tensors_mut()) {
            let t = set.get(name).ok_or_else(|| TrainError::Config(format!("checkpoint lacks {}", name)))?;
            if t.shape() != slot.shape() {
                return Err(TrainError::Config(format!("{} has shape {:?}, expected {:?}", name, t.shape(), slot.shape())));
            }
            *slot = t.clone();
        }
        if names.len() != set.len() {
            return Err(TrainError::Config(format!("checkpoint has {} tensors, model expects {}", set.len(), names.len())));
        }
        Ok(model)
    }

    /// Entity embeddings are computed once; scoring is then pure.
    pub fn scorer(&self, graph: &HeteroGraph, exec: Execution) -> Result<LpScorer, TrainError> {
        let encoder = match (&self.encoder, &self.encoder_relations) {
            (Some(enc), Some(rel)) => Some((enc.forward(None, graph, exec)?.0, rel.clone())),
            _ => None,
        };
        let embedding = match (&self.entities, &self.embedding_relations) {
            (Some(e), Some(r)) => Some((e.clone(), r.clone())),
            _ => None,
        };
        Ok(LpScorer { kind: self.kind, mode: self.mode, beta: self.beta, encoder, embedding })
    }
}

impl Model for LpModel {
    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        if let Some(enc) = &self.encoder {
            out.extend(enc.named_tensors().into_iter().map(|(n, t)| (format!("encoder.{}", n), t)));
        }
        if let Some(r) = &self.encoder_relations {
            out.push(("encoder.relations".to_string(), r));
        }
        if let Some(e) = &self.entities {
            out.push(("embedding.entities".to_string(), e));
        }
        if let Some(r) = &self.embedding_relations {
            out.push(("embedding.relations".to_string(), r));
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        if let Some(enc) = &mut self.encoder {
            out.extend(enc.tensors_mut());
        }
        out.extend(self.encoder_relations.as_mut());
        out.extend(self.entities.as_mut());
        out.extend(self.embedding_relations.as_mut());
        out
    }
}

/// Precomputed embeddings for evaluation.
#[derive(Debug, Clone)]
pub struct LpScorer {
    kind: DecoderKind,
    mode: LpMode,
    beta: f64,
    encoder: Option<(Tensor, Tensor)>,
    embedding: Option<(Tensor, Tensor)>,
}

impl LpScorer {
    pub fn score(&self, t: Triple) -> f64 {
        let s = |(ent, rel): &(Tensor, Tensor)| {
            decoders::score(self.kind, ent.row(t.head), rel.row(t.rel), ent.row(t.tail)).expect("widths are checked at init")
        };
        let (enc, emb) = (self.encoder.as_ref().map(s), self.embedding.as_ref().map(s));
        match self.mode {
            LpMode::Encoder => enc.expect("encoder embeddings"),
            LpMode::Embedding => emb.expect("standalone embeddings"),
            LpMode::Ensemble => self.beta * enc.expect("encoder embeddings") + (1.0 - self.beta) * emb.expect("standalone embeddings"),
        }
    }

    /// Entity embeddings from the encoder, if any.
    pub fn encoder_embeddings(&self) -> Option<&Tensor> {
        self.encoder.as_ref().map(|(e, _)| e)
    }
}

/// `c Σ [y log σ(α) + (1 - y) log(1 - σ(α))]` with `c = -1 / ((1 + ω) |E'|)`.
pub fn lp_loss(tape: &mut Tape, batch: &TripleBatch, scores: Var, e_prime_size: usize, omega: usize) -> Result<Var, TrainError> {
    let s = tape.value(scores);
    if s.shape() != [batch.len()] {
        return Err(TrainError::Config(format!("{} scores for {} triples", s.len(), batch.len())));
    }
    if e_prime_size == 0 {
        return Err(TrainError::Config("no positive triples".into()));
    }
    let saturated = s.data().iter().zip(&batch.y).filter(|(a, &y)| if y { **a < -27.6 } else { **a > 27.6 }).count();
    if saturated > 0 {
        warn!("{} triples have a saturated sigmoid; log clamped at {:e}", saturated, LOG_FLOOR);
    }
    let c = -1.0 / ((1 + omega) as f64 * e_prime_size as f64);
    let pos = tape.sigmoid(scores)?;
    let flipped = tape.scale(scores, -1.0)?;
    let neg = tape.sigmoid(flipped)?;
    let pos = tape.clamp_min(pos, LOG_FLOOR)?;
    let neg = tape.clamp_min(neg, LOG_FLOOR)?;
    let log_pos = tape.log(pos)?;
    let log_neg = tape.log(neg)?;
    let y = tape.constant(Tensor::vector(batch.y.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()));
    let not_y = tape.constant(Tensor::vector(batch.y.iter().map(|&b| if b { 0.0 } else { 1.0 }).collect()));
    let a = tape.mul(y, log_pos)?;
    let b = tape.mul(not_y, log_neg)?;
    let terms = tape.add(a, b)?;
    let total = tape.sum(terms)?;
    Ok(tape.scale(total, c)?)
}

fn batch_scores(tape: &mut Tape, kind: DecoderKind, ent: Var, rel: Var, batch: &TripleBatch) -> Result<Var, TrainError> {
    let heads: Vec<usize> = batch.triples.iter().map(|t| t.head).collect();
    let rels: Vec<usize> = batch.triples.iter().map(|t| t.rel).collect();
    let tails: Vec<usize> = batch.triples.iter().map(|t| t.tail).collect();
    let h = tape.gather_rows(ent, &heads)?;
    let r = tape.gather_rows(rel, &rels)?;
    let t = tape.gather_rows(ent, &tails)?;
    Ok(score_on_tape(tape, kind, h, r, t)?)
}

/// Link-prediction loss and batch scores, with the model's tensors supplied
/// as `leaves` in [`Model::named_tensors`] order.
#[allow(clippy::too_many_arguments)]
pub fn lp_objective(
    tape: &mut Tape,
    model: &LpModel,
    leaves: &[Var],
    graph: &HeteroGraph,
    batch: &TripleBatch,
    e_prime_size: usize,
    omega: usize,
    ctx: &mut ForwardCtx<'_>,
) -> Result<(Var, Var), TrainError> {
    let mut rest = leaves;
    let mut enc_score = None;
    if let Some(enc) = &model.encoder {
        let k = enc.num_tensors();
        if rest.len() < k + 1 {
            return Err(TrainError::Config(format!("{} leaves are too few for the model", leaves.len())));
        }
        let bound = enc.bind_vars(tape, &rest[..k])?;
        let x = tape.constant(Tensor::identity(graph.num_nodes()));
        let (out, _) = stack_forward(tape, &bound, x, graph, ctx)?;
        enc_score = Some(batch_scores(tape, model.kind, out, rest[k], batch)?);
        rest = &rest[k + 1..];
    }
    let mut emb_score = None;
    if model.entities.is_some() {
        let [e, r] = rest else {
            return Err(TrainError::Config(format!("{} leaves do not match the model", leaves.len())));
        };
        emb_score = Some(batch_scores(tape, model.kind, *e, *r, batch)?);
        rest = &[];
    }
    if !rest.is_empty() {
        return Err(TrainError::Config(format!("{} leaves do not match the model", leaves.len())));
    }
    let scores = match (enc_score, emb_score) {
        (Some(a), Some(b)) => {
            let a = tape.scale(a, model.beta)?;
            let b = tape.scale(b, 1.0 - model.beta)?;
            tape.add(a, b)?
        }
        (Some(a), None) | (None, Some(a)) => a,
        (None, None) => return Err(TrainError::Config("model has no scoring component".into())),
    };
    Ok((lp_loss(tape, batch, scores, e_prime_size, omega)?, scores))
}

#[derive(Debug, Clone)]
pub struct LpRun {
    pub model: LpModel,
    pub history: Vec<EpochMetrics>,
}

/// Full-batch training on the training triples with `omega` filtered
/// negatives per positive, resampled every epoch. `train_acc` is the share
/// of batch triples on the correct side of score 0; `val_metric` is the
/// filtered MRR on the validation triples.
pub fn train_lp(
    cfg: &TrainConfig,
    data: &LpData<'_>,
    exec: Execution,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<LpRun, TrainError> {
    cfg.check()?;
    let (graph, split) = (data.graph, data.split);
    let n = graph.num_nodes();
    if let Some(t) = split.all().iter().find(|t| t.head >= n || t.tail >= n || t.rel >= data.num_relations) {
        return Err(TrainError::Config(format!("triple {:?} is outside the entity or relation range", t)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = LpModel::init(cfg, n, graph.num_relations(), data.num_relations, &mut rng)?;
    let sampler = NegativeSampler::new(n, split.train.iter().copied())?;
    let known: HashSet<Triple> = split.all().into_iter().collect();
    let mut opt = Adam::new(cfg.lr);
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let batch = TripleBatch::with_negatives(&split.train, &sampler, cfg.omega, &mut rng)?;
        let (loss, scores) = train_step(&mut model, &mut opt, cfg.l2_penalty, epoch, |tape, m| {
            let leaves: Vec<Var> = m.named_tensors().into_iter().map(|(_, t)| tape.param(t.clone())).collect();
            let dropout = if cfg.dropout > 0.0 { Some(DropoutCtx { rate: cfg.dropout, rng: &mut rng }) } else { None };
            let (loss, scores) =
                lp_objective(tape, m, &leaves, graph, &batch, split.train.len(), cfg.omega, &mut ForwardCtx { exec, dropout })?;
            Ok((loss, leaves, tape.value(scores).data().to_vec()))
        })?;
        let correct = scores.iter().zip(&batch.y).filter(|(s, &y)| (**s > 0.0) == y).count();
        let train_acc = 100.0 * correct as f64 / batch.len() as f64;
        let val_metric = if split.valid.is_empty() {
            None
        } else {
            let scorer = model.scorer(graph, exec)?;
            let (_, summary) = rank_triples(|t| scorer.score(t), &split.valid, n, &known, exec);
            Some(summary.filtered.mrr)
        };
        let m = EpochMetrics { epoch, loss, train_acc, val_metric };
        on_epoch(&m);
        history.push(m);
    }
    Ok(LpRun { model, history })
}
