//! End-to-end runs of the `brgcn` binary on the bundled toy dataset.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn toy_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data/toy/toy.conf")
}

fn brgcn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_brgcn")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn run_with(cmd: &str, config: &Path, sets: &[String]) -> Output {
    let mut args = vec![cmd.to_string(), "--config".into(), config.display().to_string()];
    for s in sets {
        args.push("--set".into());
        args.push(s.clone());
    }
    brgcn(&args.iter().map(String::as_str).collect::<Vec<_>>())
}

fn out_dir(dir: &Path) -> String {
    format!("output_dir={}", dir.display())
}

fn assert_ok(o: &Output) {
    assert!(o.status.success(), "status {:?}\nstderr: {}", o.status, String::from_utf8_lossy(&o.stderr));
}

#[test]
fn train_nc_on_toy_reaches_full_train_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_with("train-nc", &toy_config(), &[out_dir(dir.path())]);
    assert_ok(&o);
    let run = dir.path().join("seed-0");
    let metrics = std::fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().next(), Some("epoch,loss,train_acc,val_metric"));
    let last: Vec<&str> = metrics.lines().last().unwrap().split(',').collect();
    assert_eq!(last[2].parse::<f64>().unwrap(), 100.0);
    for f in ["results.json", "checkpoint.txt", "config.txt"] {
        assert!(run.join(f).is_file(), "missing {}", f);
    }
}

#[test]
fn snapshot_validates_to_itself_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    assert_ok(&run_with("train-nc", &toy_config(), &[out_dir(dir.path())]));
    let snapshot = dir.path().join("seed-0/config.txt");
    let o = run_with("validate", &snapshot, &[]);
    assert_ok(&o);
    assert_eq!(String::from_utf8(o.stdout).unwrap(), std::fs::read_to_string(&snapshot).unwrap());

    let again = dir.path().join("again");
    assert_ok(&run_with("train-nc", &snapshot, &[out_dir(&again)]));
    let read = |p: PathBuf| std::fs::read(p).unwrap();
    assert_eq!(read(dir.path().join("seed-0/metrics.csv")), read(again.join("seed-0/metrics.csv")));
}

#[test]
fn eval_and_export_attention_from_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    assert_ok(&run_with("train-nc", &toy_config(), &[out_dir(dir.path())]));
    let snapshot = dir.path().join("seed-0/config.txt");

    let o = run_with("eval", &snapshot, &[]);
    assert_ok(&o);
    let eval: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(eval["train_accuracy"], 100.0);

    assert_ok(&run_with("export-attention", &snapshot, &[]));
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("attention.json")).unwrap()).unwrap();
    let mut vectors = 0;
    for layer in doc["layers"].as_array().unwrap() {
        for rec in layer["gamma"].as_array().unwrap() {
            let s: f64 = rec["gamma"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).sum();
            assert!((s - 1.0).abs() <= 1e-9, "gamma sums to {}", s);
            vectors += 1;
        }
    }
    assert!(vectors > 0);
}

#[test]
fn eval_without_checkpoint_exits_2() {
    let o = run_with("eval", &toy_config(), &[]);
    assert_eq!(o.status.code(), Some(2));
    let o = run_with("eval", &toy_config(), &["checkpoint=/no/such/checkpoint.txt".into()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("checkpoint"));
}

#[test]
fn bad_keys_exit_2_and_are_all_named() {
    let o = run_with("validate", &toy_config(), &["lr=-1".into(), "no_such_key=1".into(), "dropout=2".into()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    for key in ["lr:", "no_such_key:", "dropout:"] {
        assert!(err.contains(key), "{} not reported in {}", key, err);
    }
}

#[test]
fn empty_config_echoes_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.conf");
    std::fs::write(&empty, "").unwrap();
    let o = run_with("validate", &empty, &[]);
    assert_ok(&o);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("lr = 0.01\n") && text.contains("variant = full\n") && text.contains("preset = none\n"));
}

#[test]
fn divergent_training_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_with("train-nc", &toy_config(), &[out_dir(dir.path()), "lr=1e308".into()]);
    assert_eq!(o.status.code(), Some(3), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("numeric failure"));
}

#[test]
fn train_lp_and_ablate_on_toy() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_with("train-lp", &toy_config(), &[out_dir(&dir.path().join("lp")), "epochs=20".into(), "seeds=1,2".into()]);
    assert_ok(&o);
    for s in [1, 2] {
        let r: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join(format!("lp/seed-{}/results.json", s))).unwrap()).unwrap();
        let test = &r["test"];
        assert!(test["filtered_mrr"].as_f64().unwrap() >= test["raw_mrr"].as_f64().unwrap());
    }

    let o = run_with(
        "ablate",
        &toy_config(),
        &[out_dir(&dir.path().join("ab")), "epochs=10".into(), "ablation_fractions=0.5,1".into()],
    );
    assert_ok(&o);
    let csv = std::fs::read_to_string(dir.path().join("ab/ablation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3 * 2);
    assert!(dir.path().join("ab/seed-0/relation_scores.json").is_file());
}
