//! Subcommand bodies. Every run writes into `output_dir/seed-<seed>/`.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use anyhow::Context;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use super::{CliError, ExperimentConfig};
use crate::diffnum::{load_checkpoint, save_checkpoint, ParamSet};
use crate::evalkit::{self, ablation_csv, rank_triples, AblationRow, RankSummary};
use crate::exec::Execution;
use crate::hetgraph::{
    load_labels, load_node_list, load_triple_list, load_triples, HeteroGraph, NodeLabels, NodeSplit, Triple, TripleSplit,
};
use crate::layer::{export_json, AttentionTrace};
use crate::training::{self, metrics_csv, nc_model_from_param_set, predict_nc, LpData, LpModel, Model, NcData, Task, TrainConfig};

fn execution(cfg: &ExperimentConfig) -> Execution {
    if cfg.parallel {
        Execution::Parallel
    } else {
        Execution::Sequential
    }
}

fn required<'a>(p: &'a Option<PathBuf>, key: &str, what: &str) -> Result<&'a Path, CliError> {
    p.as_deref().ok_or_else(|| CliError::config(format!("{}: required by {}", key, what)))
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn write_json(path: &Path, v: &Value) -> Result<(), CliError> {
    write(path, &(serde_json::to_string_pretty(v).context("serializing JSON")? + "\n"))
}

fn seed_dir(cfg: &ExperimentConfig, seed: u64) -> Result<PathBuf, CliError> {
    let dir = cfg.output_dir.join(format!("seed-{}", seed));
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn train_config(cfg: &ExperimentConfig, seed: u64) -> TrainConfig {
    TrainConfig { seed, ..cfg.train.clone() }
}

/// Snapshot for one seed, pointing `checkpoint` at that run's checkpoint,
/// so it can be passed straight back to `eval` or `export-attention`.
fn write_snapshot(cfg: &ExperimentConfig, seed: u64, dir: &Path, checkpoint: Option<PathBuf>) -> Result<(), CliError> {
    let mut snap = cfg.clone();
    snap.seeds = vec![seed];
    if checkpoint.is_some() {
        snap.checkpoint = checkpoint;
    }
    write(&dir.join("config.txt"), &snap.to_text())
}

fn save_params(set: &ParamSet, path: &Path) -> Result<(), CliError> {
    save_checkpoint(set, path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn load_params(cfg: &ExperimentConfig, what: &str) -> Result<ParamSet, CliError> {
    let path = required(&cfg.checkpoint, "checkpoint", what)?;
    if !path.is_file() {
        return Err(CliError::config(format!("checkpoint: file {} does not exist", path.display())));
    }
    Ok(load_checkpoint(path).with_context(|| format!("reading {}", path.display()))?)
}

fn load_graph(cfg: &ExperimentConfig, what: &str) -> Result<HeteroGraph, CliError> {
    let path = required(&cfg.triples, "triples", what)?;
    let load = load_triples(path, cfg.triple_format()).with_context(|| format!("loading {}", path.display()))?;
    if load.duplicates > 0 {
        log::warn!("dropped {} duplicate triples from {}", load.duplicates, path.display());
    }
    Ok(load.graph)
}

struct NcSetup {
    /// As loaded; ablation filters relations on this graph.
    base: HeteroGraph,
    /// With the configured inverse and self-loop relations.
    graph: HeteroGraph,
    labels: NodeLabels,
    split: NodeSplit,
}

fn nc_setup(cfg: &ExperimentConfig, what: &str) -> Result<NcSetup, CliError> {
    let base = load_graph(cfg, what)?;
    let path = required(&cfg.labels, "labels", what)?;
    let labels = load_labels(path, &base).with_context(|| format!("loading {}", path.display()))?;
    let labeled = labels.labeled_ids();
    let split = match &cfg.train_nodes {
        Some(train) => {
            let list = |p: &Option<PathBuf>| -> Result<Vec<usize>, CliError> {
                match p {
                    Some(p) => Ok(load_node_list(p, &base).with_context(|| format!("loading {}", p.display()))?),
                    None => Ok(Vec::new()),
                }
            };
            NodeSplit::new(list(&Some(train.clone()))?, list(&cfg.valid_nodes)?, list(&cfg.test_nodes)?, &labeled)?
        }
        None => NodeSplit::random(&labeled, cfg.valid_fraction, cfg.test_fraction, &mut ChaCha8Rng::seed_from_u64(cfg.split_seed)),
    };
    let graph = base.augment(cfg.add_inverse, cfg.self_loop);
    Ok(NcSetup { base, graph, labels, split })
}

struct LpSetup {
    /// Entities and relations of the whole KG.
    kg: HeteroGraph,
    /// Training triples plus the configured augmentation.
    graph: HeteroGraph,
    split: TripleSplit,
    known: HashSet<Triple>,
}

fn lp_setup(cfg: &ExperimentConfig, what: &str) -> Result<LpSetup, CliError> {
    let kg = load_graph(cfg, what)?;
    let split = match &cfg.train_triples {
        Some(train) => {
            let list = |p: &Option<PathBuf>| -> Result<Vec<Triple>, CliError> {
                match p {
                    Some(p) => Ok(load_triple_list(p, &kg).with_context(|| format!("loading {}", p.display()))?),
                    None => Ok(Vec::new()),
                }
            };
            TripleSplit::new(list(&Some(train.clone()))?, list(&cfg.valid_triples)?, list(&cfg.test_triples)?, kg.triples())?
        }
        None => TripleSplit::random(kg.triples(), cfg.valid_fraction, cfg.test_fraction, &mut ChaCha8Rng::seed_from_u64(cfg.split_seed)),
    };
    let graph = training::message_graph(&kg, &split.train, cfg.add_inverse, cfg.self_loop)?;
    let known = split.all().into_iter().collect();
    Ok(LpSetup { kg, graph, split, known })
}

fn opt_accuracy(probs: &crate::diffnum::Tensor, labels: &NodeLabels, nodes: &[usize]) -> Result<Value, CliError> {
    if nodes.is_empty() {
        return Ok(Value::Null);
    }
    Ok(json!(evalkit::accuracy(probs, labels, nodes)?))
}

fn nc_accuracies(probs: &crate::diffnum::Tensor, s: &NcSetup) -> Result<Value, CliError> {
    Ok(json!({
        "train_accuracy": opt_accuracy(probs, &s.labels, &s.split.train)?,
        "valid_accuracy": opt_accuracy(probs, &s.labels, &s.split.valid)?,
        "test_accuracy": opt_accuracy(probs, &s.labels, &s.split.test)?,
    }))
}

fn merge(mut a: Value, b: Value) -> Value {
    if let (Value::Object(a), Value::Object(b)) = (&mut a, b) {
        a.extend(b);
    }
    a
}

pub fn train_nc(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let s = nc_setup(cfg, "train-nc")?;
    let exec = execution(cfg);
    for &seed in &cfg.seeds {
        let tc = train_config(cfg, seed);
        let data = NcData { graph: &s.graph, labels: &s.labels, split: &s.split };
        let run = training::train_nc(&tc, &data, exec, |m| log::debug!("seed {} {}", seed, m.csv_row()))?;
        let (probs, _) = predict_nc(&run.model, &s.graph, exec)?;
        let dir = seed_dir(cfg, seed)?;
        write(&dir.join("metrics.csv"), &metrics_csv(&run.history))?;
        let summary = merge(
            json!({
                "seed": seed,
                "epochs_run": run.history.len(),
                "best_epoch": run.best_epoch,
                "final_loss": run.history.last().map(|m| m.loss),
            }),
            nc_accuracies(&probs, &s)?,
        );
        write_json(&dir.join("results.json"), &summary)?;
        let ckpt = dir.join("checkpoint.txt");
        save_params(&run.model.to_param_set(), &ckpt)?;
        write_snapshot(cfg, seed, &dir, Some(ckpt))?;
        log::info!("seed {}: {}", seed, summary);
    }
    Ok(())
}

fn rank_summary(scorer: &training::LpScorer, triples: &[Triple], s: &LpSetup, exec: Execution) -> Value {
    if triples.is_empty() {
        return Value::Null;
    }
    let (_, summary): (_, RankSummary) = rank_triples(|t| scorer.score(t), triples, s.kg.num_nodes(), &s.known, exec);
    json!(summary.to_map())
}

pub fn train_lp(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let s = lp_setup(cfg, "train-lp")?;
    let exec = execution(cfg);
    for &seed in &cfg.seeds {
        let tc = train_config(cfg, seed);
        let data = LpData { graph: &s.graph, num_relations: s.kg.num_relations(), split: &s.split };
        let run = training::train_lp(&tc, &data, exec, |m| log::debug!("seed {} {}", seed, m.csv_row()))?;
        let scorer = run.model.scorer(&s.graph, exec)?;
        let dir = seed_dir(cfg, seed)?;
        write(&dir.join("metrics.csv"), &metrics_csv(&run.history))?;
        let summary = json!({
            "seed": seed,
            "epochs_run": run.history.len(),
            "final_loss": run.history.last().map(|m| m.loss),
            "valid": rank_summary(&scorer, &s.split.valid, &s, exec),
            "test": rank_summary(&scorer, &s.split.test, &s, exec),
        });
        write_json(&dir.join("results.json"), &summary)?;
        let ckpt = dir.join("checkpoint.txt");
        save_params(&run.model.to_param_set(), &ckpt)?;
        write_snapshot(cfg, seed, &dir, Some(ckpt))?;
        log::info!("seed {}: {}", seed, summary);
    }
    Ok(())
}

fn lp_model(cfg: &ExperimentConfig, s: &LpSetup, set: &ParamSet) -> Result<LpModel, CliError> {
    Ok(LpModel::from_param_set(&cfg.train, s.kg.num_nodes(), s.graph.num_relations(), s.kg.num_relations(), set)?)
}

fn nc_model(cfg: &ExperimentConfig, s: &NcSetup, set: &ParamSet) -> Result<crate::layer::LayerStack, CliError> {
    Ok(nc_model_from_param_set(&cfg.train, s.graph.num_nodes(), s.graph.num_relations(), s.labels.num_classes(), set)?)
}

fn create_output_dir(cfg: &ExperimentConfig) -> Result<(), CliError> {
    std::fs::create_dir_all(&cfg.output_dir).with_context(|| format!("creating {}", cfg.output_dir.display()))?;
    Ok(())
}

pub fn eval(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let set = load_params(cfg, "eval")?;
    let exec = execution(cfg);
    let result = match cfg.train.task {
        Task::NodeClassification => {
            let s = nc_setup(cfg, "eval")?;
            let (probs, _) = predict_nc(&nc_model(cfg, &s, &set)?, &s.graph, exec)?;
            nc_accuracies(&probs, &s)?
        }
        Task::LinkPrediction => {
            let s = lp_setup(cfg, "eval")?;
            let scorer = lp_model(cfg, &s, &set)?.scorer(&s.graph, exec)?;
            json!({
                "valid": rank_summary(&scorer, &s.split.valid, &s, exec),
                "test": rank_summary(&scorer, &s.split.test, &s, exec),
            })
        }
    };
    create_output_dir(cfg)?;
    write_json(&cfg.output_dir.join("eval.json"), &result)?;
    println!("{}", serde_json::to_string_pretty(&result).context("serializing JSON")?);
    Ok(())
}

pub fn ablate(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let s = nc_setup(cfg, "ablate")?;
    let exec = execution(cfg);
    let mut all: Vec<AblationRow> = Vec::new();
    for &seed in &cfg.seeds {
        let tc = train_config(cfg, seed);
        let (scores, rows) = evalkit::ablate(
            &s.base,
            &s.labels,
            &s.split,
            &tc,
            (cfg.add_inverse, cfg.self_loop),
            &cfg.ablation_strategies,
            &cfg.ablation_fractions,
            exec,
        )?;
        let dir = seed_dir(cfg, seed)?;
        write(&dir.join("ablation.csv"), &ablation_csv(&rows))?;
        let scores: Vec<Value> =
            scores.iter().map(|&(r, v)| json!({"id": r, "relation": s.base.relation_name(r), "score": v})).collect();
        write_json(&dir.join("relation_scores.json"), &Value::Array(scores))?;
        write_snapshot(cfg, seed, &dir, None)?;
        log::info!("seed {}: {} ablation runs", seed, rows.len());
        all.extend(rows);
    }
    write(&cfg.output_dir.join("ablation.csv"), &ablation_csv(&all))
}

pub fn export_attention(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let set = load_params(cfg, "export-attention")?;
    let exec = execution(cfg);
    let (traces, graph): (Vec<AttentionTrace>, HeteroGraph) = match cfg.train.task {
        Task::NodeClassification => {
            let s = nc_setup(cfg, "export-attention")?;
            let (_, traces) = predict_nc(&nc_model(cfg, &s, &set)?, &s.graph, exec)?;
            (traces, s.graph)
        }
        Task::LinkPrediction => {
            let s = lp_setup(cfg, "export-attention")?;
            let model = lp_model(cfg, &s, &set)?;
            let enc = model
                .encoder
                .as_ref()
                .ok_or_else(|| CliError::config("lp_mode: the embedding mode has no attention to export"))?;
            let (_, traces) = enc.forward(None, &s.graph, exec).map_err(training::TrainError::from)?;
            (traces, s.graph)
        }
    };
    create_output_dir(cfg)?;
    let path = cfg.output_dir.join("attention.json");
    write_json(&path, &export_json(&traces, &graph))?;
    log::info!("wrote {}", path.display());
    Ok(())
}
