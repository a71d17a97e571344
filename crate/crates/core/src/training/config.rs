use std::fmt;
use std::str::FromStr;

use crate::decoders::DecoderKind;
use crate::layer::Variant;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    NodeClassification,
    LinkPrediction,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::NodeClassification => "node_classification",
            Task::LinkPrediction => "link_prediction",
        })
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "node_classification" => Ok(Task::NodeClassification),
            "link_prediction" => Ok(Task::LinkPrediction),
            _ => Err(format!("unknown task {:?} (expected node_classification, link_prediction)", s)),
        }
    }
}

/// Which scores feed link prediction: the graph encoder with a decoder, a
/// standalone embedding model with the same decoder, or their weighted mix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpMode {
    Encoder,
    Embedding,
    Ensemble,
}

impl fmt::Display for LpMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LpMode::Encoder => "encoder",
            LpMode::Embedding => "embedding",
            LpMode::Ensemble => "ensemble",
        })
    }
}

impl FromStr for LpMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "encoder" => Ok(LpMode::Encoder),
            "embedding" => Ok(LpMode::Embedding),
            "ensemble" => Ok(LpMode::Ensemble),
            _ => Err(format!("unknown lp_mode {:?} (expected encoder, embedding, ensemble)", s)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub task: Task,
    pub variant: Variant,
    pub lr: f64,
    pub l2_penalty: f64,
    pub epochs: usize,
    pub hidden_units: usize,
    /// Layers of the node-classification model.
    pub num_layers: usize,
    /// Layers of the link-prediction encoder.
    pub encoder_layers: usize,
    /// Output width of the link-prediction encoder; relation embeddings use
    /// the same width.
    pub embedding_dim: usize,
    pub num_bases: usize,
    pub dropout: f64,
    pub leaky_slope: f64,
    pub input_projection: bool,
    pub omega: usize,
    pub beta: f64,
    pub decoder: DecoderKind,
    pub lp_mode: LpMode,
    /// Early stopping patience in epochs; 0 disables it.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            task: Task::NodeClassification,
            variant: Variant::Full,
            lr: 0.01,
            l2_penalty: 0.0,
            epochs: 50,
            hidden_units: 16,
            num_layers: 2,
            encoder_layers: 1,
            embedding_dim: 16,
            num_bases: 0,
            dropout: 0.0,
            leaky_slope: 0.2,
            input_projection: false,
            omega: 1,
            beta: 0.4,
            decoder: DecoderKind::DistMult,
            lp_mode: LpMode::Encoder,
            patience: 0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Every violated constraint as `(key, message)`.
    pub fn issues(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            out.push(("lr", format!("must be a positive number, got {}", self.lr)));
        }
        if !(self.l2_penalty >= 0.0 && self.l2_penalty.is_finite()) {
            out.push(("l2_penalty", format!("must be non-negative, got {}", self.l2_penalty)));
        }
        if self.epochs == 0 {
            out.push(("epochs", "must be at least 1".into()));
        }
        if self.hidden_units == 0 {
            out.push(("hidden_units", "must be at least 1".into()));
        }
        if self.num_layers == 0 {
            out.push(("num_layers", "must be at least 1".into()));
        }
        if self.encoder_layers == 0 {
            out.push(("encoder_layers", "must be at least 1".into()));
        }
        if self.embedding_dim == 0 {
            out.push(("embedding_dim", "must be at least 1".into()));
        } else if let Err(e) = self.decoder.check_width(self.embedding_dim) {
            out.push(("embedding_dim", e.to_string()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            out.push(("dropout", format!("must lie in [0, 1), got {}", self.dropout)));
        }
        if !self.leaky_slope.is_finite() {
            out.push(("leaky_slope", "must be finite".into()));
        }
        if self.task == Task::LinkPrediction && self.omega == 0 {
            out.push(("omega", "must be at least 1 for link prediction".into()));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            out.push(("beta", format!("must lie in [0, 1], got {}", self.beta)));
        }
        out
    }

    pub fn check(&self) -> Result<(), super::TrainError> {
        let issues = self.issues();
        if issues.is_empty() {
            return Ok(());
        }
        let msg: Vec<String> = issues.into_iter().map(|(k, m)| format!("{}: {}", k, m)).collect();
        Err(super::TrainError::Config(msg.join("; ")))
    }
}
