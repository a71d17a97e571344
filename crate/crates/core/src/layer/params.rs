use std::fmt;
use std::str::FromStr;

use rand::Rng;

use super::LayerError;
use crate::diffnum::{ParamSet, Tape, Tensor, Var};

/// Which attention levels a layer uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Node-level and relation-level attention.
    Full,
    /// Node-level attention; relation fusion is an unweighted sum of the
    /// value-projected `z_r` plus `ReLU(W_self h_i)` added once.
    NodeOnly,
    /// Relation-level attention over uniform neighbor means.
    RelationOnly,
    /// `ReLU(Σ_r Σ_j W_r h_j / |N_i^r| + W_self h_i)`.
    RgcnBaseline,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::NodeOnly, Variant::RelationOnly, Variant::RgcnBaseline];

    pub fn uses_node_attention(self) -> bool {
        matches!(self, Variant::Full | Variant::NodeOnly)
    }

    pub fn uses_relation_attention(self) -> bool {
        matches!(self, Variant::Full | Variant::RelationOnly)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Full => "full",
            Variant::NodeOnly => "node_only",
            Variant::RelationOnly => "relation_only",
            Variant::RgcnBaseline => "rgcn_baseline",
        })
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.to_string() == s)
            .ok_or_else(|| format!("unknown variant {:?} (expected full, node_only, relation_only, rgcn_baseline)", s))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerConfig {
    pub d_in: usize,
    /// Output width; also the query/key/value width, since the value
    /// vectors are added to `W_self h_i`.
    pub d_out: usize,
    pub num_relations: usize,
    /// Number of shared basis matrices; 0 disables the decomposition.
    pub num_bases: usize,
    pub leaky_slope: f64,
    pub variant: Variant,
    /// Per-relation `d_in × d_in` projection of neighbor features before
    /// node-level attention.
    pub input_projection: bool,
    /// ReLU on each `δ` (on the output for the single-level variants).
    /// Off for a layer whose output feeds a softmax.
    pub output_relu: bool,
}

impl LayerConfig {
    pub fn new(d_in: usize, d_out: usize, num_relations: usize) -> Self {
        Self {
            d_in,
            d_out,
            num_relations,
            num_bases: 0,
            leaky_slope: 0.2,
            variant: Variant::Full,
            input_projection: false,
            output_relu: true,
        }
    }

    pub fn validate(&self) -> Result<(), LayerError> {
        if self.d_in == 0 || self.d_out == 0 {
            return Err(LayerError::Config(format!("zero dimension: d_in={} d_out={}", self.d_in, self.d_out)));
        }
        if !self.leaky_slope.is_finite() {
            return Err(LayerError::Config("leaky_slope must be finite".into()));
        }
        Ok(())
    }
}

/// Per-relation `d_out × d_in` matrices, stored directly or as coefficients
/// (`num_relations × num_bases`) over the layer's shared bases.
#[derive(Debug, Clone, PartialEq)]
pub enum RelationMatrices {
    Dense(Vec<Tensor>),
    Basis(Tensor),
}

/// Learnable tensors of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub config: LayerConfig,
    /// `a_r`, length `2 d_in`.
    pub attention: Option<Vec<Tensor>>,
    pub query: Option<RelationMatrices>,
    pub key: Option<RelationMatrices>,
    pub value: RelationMatrices,
    /// `num_bases × (d_out · d_in)`, row `b` is basis matrix `V_b` flattened.
    pub bases: Option<Tensor>,
    pub w_self: Tensor,
    pub projection: Option<Vec<Tensor>>,
}

fn glorot(rng: &mut impl Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-limit..limit)).collect()).unwrap()
}

impl LayerParams {
    /// Glorot-uniform initialization.
    pub fn init(config: LayerConfig, rng: &mut impl Rng) -> Result<Self, LayerError> {
        config.validate()?;
        let (din, dout, nr, nb) = (config.d_in, config.d_out, config.num_relations, config.num_bases);
        let v = config.variant;
        let attention = v
            .uses_node_attention()
            .then(|| (0..nr).map(|_| glorot(rng, &[2 * din], 2 * din, 1)).collect());
        let rel_mats = |rng: &mut _| {
            if nb > 0 {
                RelationMatrices::Basis(glorot(rng, &[nr, nb], nb, nr))
            } else {
                RelationMatrices::Dense((0..nr).map(|_| glorot(rng, &[dout, din], din, dout)).collect())
            }
        };
        let query = v.uses_relation_attention().then(|| rel_mats(rng));
        let key = v.uses_relation_attention().then(|| rel_mats(rng));
        let value = rel_mats(rng);
        let bases = (nb > 0).then(|| glorot(rng, &[nb, dout * din], din, dout));
        let w_self = glorot(rng, &[dout, din], din, dout);
        let projection = (config.input_projection && v != Variant::RgcnBaseline)
            .then(|| (0..nr).map(|_| glorot(rng, &[din, din], din, din)).collect());
        Ok(Self { config, attention, query, key, value, bases, w_self, projection })
    }

    /// Named tensors in canonical order.
    pub fn visit(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        if let Some(a) = &self.attention {
            out.extend(a.iter().enumerate().map(|(r, t)| (format!("attention.{}", r), t)));
        }
        fn mats<'a>(name: &str, m: &'a RelationMatrices, out: &mut Vec<(String, &'a Tensor)>) {
            match m {
                RelationMatrices::Dense(ws) => {
                    out.extend(ws.iter().enumerate().map(|(r, t)| (format!("{}.{}", name, r), t)))
                }
                RelationMatrices::Basis(c) => out.push((format!("{}.coeffs", name), c)),
            }
        }
        if let Some(q) = &self.query {
            mats("query", q, &mut out);
        }
        if let Some(k) = &self.key {
            mats("key", k, &mut out);
        }
        mats("value", &self.value, &mut out);
        if let Some(b) = &self.bases {
            out.push(("bases".into(), b));
        }
        out.push(("self".into(), &self.w_self));
        if let Some(p) = &self.projection {
            out.extend(p.iter().enumerate().map(|(r, t)| (format!("projection.{}", r), t)));
        }
        out
    }

    /// Mutable tensors in the same order as [`visit`](Self::visit).
    pub fn visit_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        if let Some(a) = &mut self.attention {
            out.extend(a.iter_mut());
        }
        fn mats<'a>(m: &'a mut RelationMatrices, out: &mut Vec<&'a mut Tensor>) {
            match m {
                RelationMatrices::Dense(ws) => out.extend(ws.iter_mut()),
                RelationMatrices::Basis(c) => out.push(c),
            }
        }
        if let Some(q) = &mut self.query {
            mats(q, &mut out);
        }
        if let Some(k) = &mut self.key {
            mats(k, &mut out);
        }
        mats(&mut self.value, &mut out);
        if let Some(b) = &mut self.bases {
            out.push(b);
        }
        out.push(&mut self.w_self);
        if let Some(p) = &mut self.projection {
            out.extend(p.iter_mut());
        }
        out
    }

    pub fn to_param_set(&self) -> ParamSet {
        let mut set = ParamSet::new();
        for (name, t) in self.visit() {
            set.insert(name, t.clone());
        }
        set
    }

    /// Loads tensors for `config` from `set`, checking every shape against a
    /// freshly initialized layer.
    pub fn from_param_set(config: LayerConfig, set: &ParamSet) -> Result<Self, LayerError> {
        let mut rng = rand::rngs::mock::StepRng::new(0, 1);
        let mut layer = Self::init(config, &mut rng)?;
        let names: Vec<String> = layer.visit().into_iter().map(|(n, _)| n).collect();
        for (name, slot) in names.iter().zip(layer.visit_mut()) {
            let t = set.get(name).ok_or_else(|| LayerError::Config(format!("missing parameter {}", name)))?;
            if t.shape() != slot.shape() {
                return Err(LayerError::Config(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    name,
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t.clone();
        }
        if set.len() != names.len() {
            return Err(LayerError::Config(format!("expected {} parameters, found {}", names.len(), set.len())));
        }
        Ok(layer)
    }

    /// Per-relation matrices, reconstructing `W_r = Σ_b c[r, b] V_b` when the
    /// basis decomposition is on.
    pub fn materialize(&self, m: &RelationMatrices) -> Vec<Tensor> {
        let (din, dout) = (self.config.d_in, self.config.d_out);
        match m {
            RelationMatrices::Dense(ws) => ws.clone(),
            RelationMatrices::Basis(coeffs) => {
                let bases = self.bases.as_ref().expect("basis coefficients without bases");
                let nb = self.config.num_bases;
                (0..self.config.num_relations)
                    .map(|r| {
                        let mut w = vec![0.0; dout * din];
                        for b in 0..nb {
                            let c = coeffs.get2(r, b);
                            for (x, v) in w.iter_mut().zip(bases.row(b)) {
                                *x += c * v;
                            }
                        }
                        Tensor::new(vec![dout, din], w).unwrap()
                    })
                    .collect()
            }
        }
    }

    /// Copy with every basis-decomposed matrix set replaced by its dense
    /// materialization.
    pub fn densified(&self) -> LayerParams {
        let mut out = self.clone();
        let dense = |m: &RelationMatrices| RelationMatrices::Dense(self.materialize(m));
        out.query = self.query.as_ref().map(dense);
        out.key = self.key.as_ref().map(dense);
        out.value = dense(&self.value);
        out.bases = None;
        out.config.num_bases = 0;
        out
    }

    pub fn num_scalars(&self) -> usize {
        self.visit().iter().map(|(_, t)| t.len()).sum()
    }

    /// Records every tensor as a leaf (trainable or constant) and
    /// materializes basis-decomposed matrices on the tape.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<BoundLayer, LayerError> {
        let leaves: Vec<Var> = self
            .visit()
            .into_iter()
            .map(|(_, t)| if trainable { tape.param(t.clone()) } else { tape.constant(t.clone()) })
            .collect();
        self.bind_vars(tape, &leaves)
    }

    /// Like [`bind`](Self::bind) but uses caller-owned leaf vars, one per
    /// tensor in [`visit`](Self::visit) order.
    pub fn bind_vars(&self, tape: &mut Tape, leaves: &[Var]) -> Result<BoundLayer, LayerError> {
        let expected = self.visit();
        if leaves.len() != expected.len() {
            return Err(LayerError::Config(format!("{} leaves for {} layer tensors", leaves.len(), expected.len())));
        }
        for ((name, t), &v) in expected.iter().zip(leaves) {
            if tape.value(v).shape() != t.shape() {
                return Err(LayerError::Config(format!(
                    "leaf for {} has shape {:?}, expected {:?}",
                    name,
                    tape.value(v).shape(),
                    t.shape()
                )));
            }
        }
        enum Pending {
            Dense(Vec<Var>),
            Basis(Var),
        }
        let mut it = leaves.iter().copied();
        let mut next = || it.next().expect("leaf count checked above");
        let attention = self.attention.as_ref().map(|a| a.iter().map(|_| next()).collect::<Vec<_>>());
        let mut pend = |m: &RelationMatrices| match m {
            RelationMatrices::Dense(ws) => Pending::Dense(ws.iter().map(|_| next()).collect()),
            RelationMatrices::Basis(_) => Pending::Basis(next()),
        };
        let query = self.query.as_ref().map(&mut pend);
        let key = self.key.as_ref().map(&mut pend);
        let value = pend(&self.value);
        let bases = self.bases.as_ref().map(|_| next());
        let w_self = next();
        let projection = self.projection.as_ref().map(|p| p.iter().map(|_| next()).collect::<Vec<_>>());

        let (din, dout) = (self.config.d_in, self.config.d_out);
        let resolve = |p: Pending, tape: &mut Tape| -> Result<Vec<Var>, LayerError> {
            match p {
                Pending::Dense(vs) => Ok(vs),
                Pending::Basis(c) => {
                    let b = bases.ok_or_else(|| LayerError::Config("basis coefficients without bases".into()))?;
                    let all = tape.matmul(c, b)?;
                    (0..self.config.num_relations)
                        .map(|r| {
                            let row = tape.row(all, r)?;
                            Ok(tape.reshape(row, &[dout, din])?)
                        })
                        .collect()
                }
            }
        };
        let query = query.map(|p| resolve(p, tape)).transpose()?;
        let key = key.map(|p| resolve(p, tape)).transpose()?;
        let value = resolve(value, tape)?;
        Ok(BoundLayer { config: self.config.clone(), leaves: leaves.to_vec(), attention, query, key, value, w_self, projection })
    }
}

/// A layer's tensors recorded on a tape.
#[derive(Debug, Clone)]
pub struct BoundLayer {
    pub config: LayerConfig,
    /// Leaf vars in [`LayerParams::visit`] order.
    pub leaves: Vec<Var>,
    pub attention: Option<Vec<Var>>,
    pub query: Option<Vec<Var>>,
    pub key: Option<Vec<Var>>,
    pub value: Vec<Var>,
    pub w_self: Var,
    pub projection: Option<Vec<Var>>,
}
