use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_signssl"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn signssl")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 path")
}

fn synth(dir: &Path, name: &str, seed: &str, split: &str) -> PathBuf {
    let out = dir.join(name);
    let o = run(&[
        "synth-data", "--classes", "3", "--per-class", "4", "--n", "8", "--seed", seed, "--split", split, "--out", p(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    out
}

const FAST: &str = r#"{
    "pretrain": {"epochs": 2, "batch_size": 6},
    "eval": {"probe_epochs": 3, "repeats": 2, "finetune_epochs": 4, "warmup_steps": 1, "finetune_batch_size": 4},
    "boundary": {"epochs": 1}
}"#;

fn fast_config(dir: &Path) -> PathBuf {
    let path = dir.join("fast.json");
    std::fs::write(&path, FAST).unwrap();
    path
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn help_exits_zero() {
    let o = run(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("boundary-search"));
}

#[test]
fn unknown_subcommand_exits_two() {
    let o = run(&["train-everything"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).to_lowercase().contains("usage"));
}

#[test]
fn missing_dataset_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = run(&["pretrain", "--profile", "tiny", "--train", "/no/such/dataset", "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/no/such/dataset"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn config_typo_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"pretrain": {"epochz": 3}}"#).unwrap();
    let train = synth(dir.path(), "train", "1", "train");
    let o = run(&["pretrain", "--config", p(&cfg), "--train", p(&train), "--out", p(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("epochz"), "{}", stderr(&o));
}

#[test]
fn malformed_config_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, "{ not json").unwrap();
    let o = run(&["pretrain", "--config", p(&cfg), "--out", p(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn conflicting_ablation_flags_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"pretrain": {"ablation": {"no_original": true, "permuted_branches": true}}}"#).unwrap();
    let train = synth(dir.path(), "train", "1", "train");
    let o = run(&["pretrain", "--profile", "tiny", "--config", p(&cfg), "--train", p(&train), "--out", p(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn pipeline_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let train = synth(root, "train", "1", "train");
    let test = synth(root, "test", "2", "test");
    let cfg = fast_config(root);

    let pre = root.join("pre");
    let o = run(&["pretrain", "--profile", "tiny", "--config", p(&cfg), "--train", p(&train), "--out", p(&pre)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(pre.join("checkpoint/checkpoint.json").exists());
    let log = std::fs::read_to_string(pre.join("train_log.csv")).unwrap();
    assert!(log.starts_with("step,l1,l2,l3,total,embedding_std"));

    let record = read_json(&pre.join("run.json"));
    assert_eq!(record["command"], "pretrain");
    assert_eq!(record["config"]["model"]["encoder"]["blocks"], 2);
    assert_eq!(record["config"]["pretrain"]["epochs"], 2);
    assert!(record["artifacts"]["checkpoint/checkpoint.json"].as_str().unwrap().len() == 64);

    let ckpt = pre.join("checkpoint");
    for cmd in ["linear-eval", "finetune", "transfer"] {
        let out = root.join(cmd);
        let o = run(&[
            cmd, "--profile", "tiny", "--config", p(&cfg), "--checkpoint", p(&ckpt), "--train", p(&train), "--test", p(&test), "--out",
            p(&out),
        ]);
        assert!(o.status.success(), "{cmd}: {}", stderr(&o));
        let report = read_json(&out.join("report.json"));
        for key in ["top1_mean", "top1_ci95", "inertia", "embedding_std"] {
            let v = report[key].as_f64().unwrap_or_else(|| panic!("{cmd}: {key} missing"));
            assert!(v.is_finite(), "{cmd}: {key} = {v}");
        }
        let acc = report["top1_mean"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&acc));
    }

    let emb = root.join("emb");
    let o = run(&["export-embeddings", "--checkpoint", p(&ckpt), "--dataset", p(&test), "--out", p(&emb)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(emb.join("embeddings.csv")).unwrap();
    assert!(csv.starts_with("sample_id,label,u,v"));
    assert_eq!(csv.lines().count(), 13);

    let mut top: Vec<String> = std::fs::read_dir(root)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    top.sort();
    assert_eq!(top, ["emb", "fast.json", "finetune", "linear-eval", "pre", "test", "train", "transfer"]);
}

#[test]
fn identical_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let train = synth(root, "train", "3", "train");
    let cfg = fast_config(root);
    let mut records = Vec::new();
    for name in ["a", "b"] {
        let out = root.join(name);
        let o = run(&["pretrain", "--profile", "tiny", "--config", p(&cfg), "--train", p(&train), "--out", p(&out), "--seed", "4"]);
        assert!(o.status.success(), "{}", stderr(&o));
        let mut r = read_json(&out.join("run.json"));
        r["config"]["output_dir"] = Value::Null;
        records.push(r);
    }
    assert_eq!(records[0], records[1]);
    let a = std::fs::read(root.join("a/checkpoint/checkpoint.json")).unwrap();
    let b = std::fs::read(root.join("b/checkpoint/checkpoint.json")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn run_record_config_resolves_to_itself() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let train = synth(root, "train", "5", "train");
    let cfg = fast_config(root);
    let out = root.join("out");
    let o = run(&["pretrain", "--profile", "tiny", "--config", p(&cfg), "--train", p(&train), "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let record = read_json(&out.join("run.json"));
    let echoed = root.join("echo.json");
    std::fs::write(&echoed, serde_json::to_string(&record["config"]).unwrap()).unwrap();

    let again = root.join("again");
    let o = run(&["pretrain", "--config", p(&echoed), "--out", p(&again)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let second = read_json(&again.join("run.json"));
    let mut first_cfg = record["config"].clone();
    first_cfg["output_dir"] = second["config"]["output_dir"].clone();
    assert_eq!(first_cfg, second["config"]);
    assert_eq!(
        record["artifacts"]["checkpoint/checkpoint.json"],
        second["artifacts"]["checkpoint/checkpoint.json"]
    );
}

#[test]
fn boundary_search_and_ablate_write_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let train = synth(root, "train", "6", "train");
    let test = synth(root, "test", "7", "test");
    let cfg = fast_config(root);

    let out = root.join("bs");
    let o = run(&[
        "boundary-search", "--profile", "tiny", "--config", p(&cfg), "--train", p(&train), "--test", p(&test), "--stop-rule", "peak",
        "--out", p(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let result = read_json(&out.join("boundary.json"));
    assert_eq!(result["n_frames"], 8);
    assert_eq!(result["stop_rule"], "peak");
    for f in ["trace_first.csv", "trace_last.csv"] {
        assert!(std::fs::read_to_string(out.join(f)).unwrap().starts_with("k,accuracy\n"));
    }

    let out = root.join("ab");
    let o = run(&["ablate", "--profile", "tiny", "--config", p(&cfg), "--train", p(&train), "--test", p(&test), "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = read_json(&out.join("ablation.json"));
    assert_eq!(summary.as_array().unwrap().len(), 5);
    assert!(out.join("without_p_and_LN/checkpoint/checkpoint.json").exists());
}
