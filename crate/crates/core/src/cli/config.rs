//! Flat `key = value` experiment configuration.
//!
//! Resolution order, later wins: built-in defaults, the dataset preset,
//! the config file, `--set` overrides. Relative paths are resolved against
//! the config file's directory (or the working directory for `--set`), and
//! the snapshot stores them absolute so it resolves to itself.

use std::fmt;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::evalkit::Strategy;
use crate::hetgraph::TripleFormat;
use crate::layer::Variant;
use crate::training::{Task, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Aifb,
    Mutag,
    Bgs,
    Am,
}

impl Preset {
    pub const ALL: [Preset; 4] = [Preset::Aifb, Preset::Mutag, Preset::Bgs, Preset::Am];

    /// Per-dataset hyperparameters for `variant`. The baseline variant
    /// shares the full model's values; the relation-only variant has no
    /// published dropout or slope, so those stay at their defaults.
    pub fn values(self, variant: Variant) -> Vec<(&'static str, &'static str)> {
        use Preset::*;
        use Variant::*;
        // lr, l2_penalty, num_bases, epochs, dropout, leaky_slope
        let row: [&'static str; 6] = match (variant, self) {
            (Full | RgcnBaseline, Aifb) => ["0.05", "0", "0", "85", "0.4", "0.2"],
            (Full | RgcnBaseline, Mutag) => ["0.01", "0.0005", "0", "90", "0.2", "0"],
            (Full | RgcnBaseline, Bgs) => ["0.005", "0", "1", "95", "0.6", "0.4"],
            (Full | RgcnBaseline, Am) => ["0.01", "0", "0", "100", "0.6", "0"],
            (NodeOnly, Aifb) => ["0.01", "0", "6", "70", "0.6", "0.6"],
            (NodeOnly, Mutag) => ["0.001", "0", "1", "90", "0.4", "0.8"],
            (NodeOnly, Bgs) => ["0.001", "0", "0", "70", "0", "0.4"],
            (NodeOnly, Am) => ["0.001", "0", "2", "80", "0.6", "0.8"],
            (RelationOnly, Aifb) => ["0.01", "0", "2", "70", "", ""],
            (RelationOnly, Mutag) => ["0.01", "0", "0", "75", "", ""],
            (RelationOnly, Bgs) => ["0.05", "0", "4", "85", "", ""],
            (RelationOnly, Am) => ["0.001", "0.0005", "2", "85", "", ""],
        };
        let keys = ["lr", "l2_penalty", "num_bases", "epochs", "dropout", "leaky_slope"];
        let mut out = vec![("hidden_units", "16")];
        out.extend(keys.into_iter().zip(row).filter(|(_, v)| !v.is_empty()));
        out
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Aifb => "aifb",
            Preset::Mutag => "mutag",
            Preset::Bgs => "bgs",
            Preset::Am => "am",
        })
    }
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Preset::ALL
            .into_iter()
            .find(|p| p.to_string() == s)
            .ok_or_else(|| format!("unknown preset {:?} (expected none, aifb, mutag, bgs, am)", s))
    }
}

/// Everything one invocation needs. `train.seed` is overwritten per run
/// from `seeds`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    pub preset: Option<Preset>,
    pub triples: Option<PathBuf>,
    /// `None` picks by extension: `.nt` is N-Triples, anything else TSV.
    pub format: Option<TripleFormat>,
    pub labels: Option<PathBuf>,
    pub train_nodes: Option<PathBuf>,
    pub valid_nodes: Option<PathBuf>,
    pub test_nodes: Option<PathBuf>,
    pub train_triples: Option<PathBuf>,
    pub valid_triples: Option<PathBuf>,
    pub test_triples: Option<PathBuf>,
    pub valid_fraction: f64,
    pub test_fraction: f64,
    pub split_seed: u64,
    pub add_inverse: bool,
    pub self_loop: bool,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub ablation_strategies: Vec<Strategy>,
    pub ablation_fractions: Vec<f64>,
    pub parallel: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            preset: None,
            triples: None,
            format: None,
            labels: None,
            train_nodes: None,
            valid_nodes: None,
            test_nodes: None,
            train_triples: None,
            valid_triples: None,
            test_triples: None,
            valid_fraction: 0.0,
            test_fraction: 0.2,
            split_seed: 0,
            add_inverse: true,
            self_loop: false,
            seeds: vec![0],
            output_dir: absolute(Path::new("runs")),
            checkpoint: None,
            ablation_strategies: Strategy::ALL.to_vec(),
            ablation_fractions: (1..=10).map(|k| k as f64 / 10.0).collect(),
            parallel: true,
        }
    }
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

type Setter = fn(&mut ExperimentConfig, &str, &Path) -> Result<(), String>;
type Getter = fn(&ExperimentConfig) -> String;

/// One documented configuration key.
pub struct Key {
    pub name: &'static str,
    pub doc: &'static str,
    set: Setter,
    get: Getter,
}

fn parse<T: FromStr>(v: &str) -> Result<T, String>
where
    T::Err: fmt::Display,
{
    v.parse::<T>().map_err(|e| format!("cannot parse {:?}: {}", v, e))
}

fn parse_list<T: FromStr>(v: &str) -> Result<Vec<T>, String>
where
    T::Err: fmt::Display,
{
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(parse).collect()
}

fn join<T: fmt::Display>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn path(v: &str, base: &Path) -> Option<PathBuf> {
    (!v.is_empty()).then(|| absolute(&base.join(v)))
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

macro_rules! field {
    ($name:literal, $doc:literal, $($f:ident).+) => {
        Key {
            name: $name,
            doc: $doc,
            set: |c, v, _| {
                c.$($f).+ = parse(v)?;
                Ok(())
            },
            get: |c| c.$($f).+.to_string(),
        }
    };
}

macro_rules! path_field {
    ($name:literal, $doc:literal, $f:ident) => {
        Key {
            name: $name,
            doc: $doc,
            set: |c, v, base| {
                c.$f = path(v, base);
                Ok(())
            },
            get: |c| show_path(&c.$f),
        }
    };
}

/// Every accepted key, in snapshot order.
pub static KEYS: &[Key] = &[
    field!("task", "node_classification or link_prediction; set by the train-* subcommands", train.task),
    Key {
        name: "preset",
        doc: "none, aifb, mutag, bgs or am: per-dataset hyperparameters for the chosen variant",
        set: |c, v, _| {
            c.preset = if v == "none" { None } else { Some(parse(v)?) };
            Ok(())
        },
        get: |c| c.preset.map_or("none".into(), |p| p.to_string()),
    },
    field!("variant", "full, node_only, relation_only or rgcn_baseline", train.variant),
    field!("lr", "Adam learning rate", train.lr),
    field!("l2_penalty", "weight of the squared L2 norm of all parameters", train.l2_penalty),
    field!("epochs", "training epochs", train.epochs),
    field!("hidden_units", "width of hidden layers", train.hidden_units),
    field!("num_layers", "node classification layers", train.num_layers),
    field!("encoder_layers", "link prediction encoder layers", train.encoder_layers),
    field!("embedding_dim", "entity and relation embedding width for link prediction", train.embedding_dim),
    field!("num_bases", "shared basis matrices per layer; 0 disables the decomposition", train.num_bases),
    field!("dropout", "dropout rate on layer inputs and node attention", train.dropout),
    field!("leaky_slope", "negative slope of the node attention LeakyReLU", train.leaky_slope),
    field!("input_projection", "per-relation projection of neighbor features", train.input_projection),
    field!("omega", "negatives per positive triple", train.omega),
    field!("beta", "encoder weight in ensemble scoring", train.beta),
    field!("decoder", "distmult, transe, hole or complex", train.decoder),
    field!("lp_mode", "encoder, embedding or ensemble", train.lp_mode),
    field!("patience", "early stopping patience on the validation metric; 0 disables", train.patience),
    Key {
        name: "seeds",
        doc: "comma-separated seeds; one run per seed",
        set: |c, v, _| {
            c.seeds = parse_list(v)?;
            if c.seeds.is_empty() {
                return Err("at least one seed is required".into());
            }
            Ok(())
        },
        get: |c| join(&c.seeds),
    },
    path_field!("triples", "graph file", triples),
    Key {
        name: "format",
        doc: "auto, tsv or ntriples; auto reads .nt files as N-Triples and anything else as TSV",
        set: |c, v, _| {
            c.format = if v == "auto" { None } else { Some(parse(v)?) };
            Ok(())
        },
        get: |c| match c.format {
            None => "auto".into(),
            Some(TripleFormat::Tsv) => "tsv".into(),
            Some(TripleFormat::NTriples) => "ntriples".into(),
        },
    },
    path_field!("labels", "node<TAB>label file for node classification", labels),
    path_field!("train_nodes", "node list; replaces the random split", train_nodes),
    path_field!("valid_nodes", "node list", valid_nodes),
    path_field!("test_nodes", "node list", test_nodes),
    path_field!("train_triples", "triple list; replaces the random split", train_triples),
    path_field!("valid_triples", "triple list", valid_triples),
    path_field!("test_triples", "triple list", test_triples),
    field!("valid_fraction", "random split: share of labeled nodes or triples for validation", valid_fraction),
    field!("test_fraction", "random split: share for testing", test_fraction),
    field!("split_seed", "seed of the random split, independent of the run seeds", split_seed),
    field!("add_inverse", "add an inverse relation per relation", add_inverse),
    field!("self_loop", "add a self-loop relation", self_loop),
    Key {
        name: "output_dir",
        doc: "directory for run artifacts",
        set: |c, v, base| {
            c.output_dir = path(v, base).ok_or("must not be empty")?;
            Ok(())
        },
        get: |c| c.output_dir.display().to_string(),
    },
    path_field!("checkpoint", "checkpoint read by eval and export-attention", checkpoint),
    Key {
        name: "ablation_strategies",
        doc: "comma-separated: random, top_attention, bottom_attention",
        set: |c, v, _| {
            c.ablation_strategies = parse_list(v)?;
            Ok(())
        },
        get: |c| join(&c.ablation_strategies),
    },
    Key {
        name: "ablation_fractions",
        doc: "comma-separated retained fractions in (0, 1]",
        set: |c, v, _| {
            c.ablation_fractions = parse_list(v)?;
            Ok(())
        },
        get: |c| join(&c.ablation_fractions),
    },
    field!("parallel", "evaluate nodes in parallel; results are identical either way", parallel),
];

pub fn find_key(name: &str) -> Option<&'static Key> {
    KEYS.iter().find(|k| k.name == name)
}

impl ExperimentConfig {
    /// Canonical `key = value` text with every key present.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for k in KEYS {
            writeln!(s, "{} = {}", k.name, (k.get)(self)).unwrap();
        }
        s
    }

    /// Triple file format, by extension when not set.
    pub fn triple_format(&self) -> TripleFormat {
        self.format.unwrap_or_else(|| match self.triples.as_ref().and_then(|p| p.extension()) {
            Some(e) if e == "nt" => TripleFormat::NTriples,
            _ => TripleFormat::Tsv,
        })
    }

    fn set(&mut self, key: &Key, value: &str, base: &Path) -> Result<(), String> {
        (key.set)(self, value, base)
    }
}

/// One `key = value` assignment and where it came from.
#[derive(Debug, Clone)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub origin: String,
    pub base: PathBuf,
}

/// Parses config text; `#` starts a comment line.
pub fn parse_entries(text: &str, origin: &str, base: &Path) -> Result<Vec<Entry>, Vec<String>> {
    let mut out = Vec::new();
    let mut errors = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let l = line.trim();
        if l.is_empty() || l.starts_with('#') {
            continue;
        }
        match l.split_once('=') {
            Some((k, v)) if !k.trim().is_empty() => out.push(Entry {
                key: k.trim().to_string(),
                value: v.trim().to_string(),
                origin: format!("{}:{}", origin, i + 1),
                base: base.to_path_buf(),
            }),
            _ => errors.push(format!("{}:{}: expected key = value, got {:?}", origin, i + 1, l)),
        }
    }
    if errors.is_empty() {
        Ok(out)
    } else {
        Err(errors)
    }
}

/// Entries from an optional config file followed by `--set` overrides.
pub fn gather(file: Option<&Path>, sets: &[String]) -> Result<Vec<Entry>, Vec<String>> {
    let mut entries = Vec::new();
    let mut errors = Vec::new();
    if let Some(f) = file {
        match std::fs::read_to_string(f) {
            Ok(text) => {
                let base = f.parent().map(absolute).unwrap_or_else(|| absolute(Path::new(".")));
                match parse_entries(&text, &f.display().to_string(), &base) {
                    Ok(e) => entries.extend(e),
                    Err(e) => errors.extend(e),
                }
            }
            Err(e) => errors.push(format!("config: cannot read {}: {}", f.display(), e)),
        }
    }
    let cwd = absolute(Path::new("."));
    for (k, s) in sets.iter().enumerate() {
        match parse_entries(s, &format!("--set #{}", k + 1), &cwd) {
            Ok(e) if e.len() == 1 => entries.extend(e),
            Ok(_) => errors.push(format!("--set #{}: expected exactly one key=value, got {:?}", k + 1, s)),
            Err(e) => errors.extend(e),
        }
    }
    if errors.is_empty() {
        Ok(entries)
    } else {
        Err(errors)
    }
}

/// Applies defaults, the preset, then `entries` in order, and checks the
/// result. `task` overrides any `task` entry. Every problem is reported,
/// each prefixed with the offending key.
pub fn resolve(entries: &[Entry], task: Option<Task>) -> Result<ExperimentConfig, Vec<String>> {
    let mut errors = Vec::new();
    for e in entries {
        if find_key(&e.key).is_none() {
            errors.push(format!("{}: unknown key ({})", e.key, e.origin));
        }
    }
    let mut cfg = ExperimentConfig::default();
    let last = |name: &str| entries.iter().rev().find(|e| e.key == name);
    let variant: Variant = last("variant").and_then(|e| e.value.parse().ok()).unwrap_or(Variant::Full);
    if let Some(preset) = last("preset").and_then(|e| e.value.parse::<Preset>().ok()) {
        for (k, v) in preset.values(variant) {
            cfg.set(find_key(k).expect("preset keys exist"), v, Path::new(".")).expect("preset values parse");
        }
    }
    for e in entries {
        if let Some(key) = find_key(&e.key) {
            if let Err(msg) = cfg.set(key, &e.value, &e.base) {
                errors.push(format!("{}: {} ({})", e.key, msg, e.origin));
            }
        }
    }
    if let Some(t) = task {
        cfg.train.task = t;
    }
    errors.extend(check(&cfg));
    if errors.is_empty() {
        Ok(cfg)
    } else {
        Err(errors)
    }
}

/// Constraint violations of a resolved config, as `key: message`.
pub fn check(cfg: &ExperimentConfig) -> Vec<String> {
    let mut errors: Vec<String> = cfg.train.issues().into_iter().map(|(k, m)| format!("{}: {}", k, m)).collect();
    for (k, v) in [("valid_fraction", cfg.valid_fraction), ("test_fraction", cfg.test_fraction)] {
        if !(0.0..1.0).contains(&v) {
            errors.push(format!("{}: must lie in [0, 1), got {}", k, v));
        }
    }
    if cfg.valid_fraction + cfg.test_fraction >= 1.0 {
        errors.push("test_fraction: valid_fraction + test_fraction must be below 1".into());
    }
    for f in &cfg.ablation_fractions {
        if !(*f > 0.0 && *f <= 1.0) {
            errors.push(format!("ablation_fractions: {} is outside (0, 1]", f));
        }
    }
    let files = [
        ("triples", &cfg.triples),
        ("labels", &cfg.labels),
        ("train_nodes", &cfg.train_nodes),
        ("valid_nodes", &cfg.valid_nodes),
        ("test_nodes", &cfg.test_nodes),
        ("train_triples", &cfg.train_triples),
        ("valid_triples", &cfg.valid_triples),
        ("test_triples", &cfg.test_triples),
        ("checkpoint", &cfg.checkpoint),
    ];
    for (k, p) in files {
        if let Some(p) = p {
            if !p.is_file() {
                errors.push(format!("{}: file {} does not exist", k, p.display()));
            }
        }
    }
    errors
}

/// `key  description` lines for `--help`-style listings.
pub fn key_docs() -> String {
    let mut s = String::new();
    for k in KEYS {
        writeln!(s, "  {:<20} {}", k.name, k.doc).unwrap();
    }
    s
}
