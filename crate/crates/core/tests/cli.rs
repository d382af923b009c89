use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn notefusion(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_notefusion"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn notefusion")
}

fn json_lines(out: &Output) -> Vec<Value> {
    String::from_utf8_lossy(&out.stdout)
        .lines()
        .map(|l| serde_json::from_str(l).expect("json line"))
        .collect()
}

fn synth(dir: &Path, patients: &str) {
    let out = notefusion(&["synth", "--out", dir.to_str().unwrap(), "--patients", patients, "--seed", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn train_then_evaluate_reproduces_the_test_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let run = tmp.path().join("run");
    synth(&data, "40");
    let ini = tmp.path().join("small.ini");
    std::fs::write(&ini, "[model]\nlstm_hidden = 8\nfilters_per_width = 4\n\n[train]\nepochs = 2\n").unwrap();

    let out = notefusion(&[
        "train",
        "--task",
        "decomp",
        "--variant",
        "multimodal_cnn",
        "--data",
        data.to_str().unwrap(),
        "--out",
        run.to_str().unwrap(),
        "--config",
        ini.to_str().unwrap(),
        "--set",
        "train.batch_size=4",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let trained = json_lines(&out).remove(0);
    assert_eq!(trained["task"], "decomp");
    assert_eq!(trained["variant"], "multimodal_cnn");
    assert!(trained["selected_epoch"].as_u64().unwrap() >= 1);
    assert!(run.join("model.safetensors").is_file() && run.join("record.json").is_file());

    let ckpt = run.join("model.safetensors");
    let out = notefusion(&["evaluate", "--checkpoint", ckpt.to_str().unwrap(), "--data", data.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let evaluated = json_lines(&out).remove(0);
    for key in ["predictions", "auroc", "aucpr"] {
        assert_eq!(evaluated[key], trained[key], "{key}");
    }

    let out = notefusion(&[
        "evaluate",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--task",
        "los",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn synth_refuses_to_overwrite_without_force() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, "5");
    let args = ["synth", "--out", data.to_str().unwrap(), "--patients", "6"];
    assert_eq!(notefusion(&args).status.code(), Some(1));
    let mut forced = args.to_vec();
    forced.push("--force");
    let out = notefusion(&forced);
    assert!(out.status.success());
    assert_eq!(json_lines(&out)[0]["patients"], 6);
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(notefusion(&[]).status.code(), Some(1));
    assert_eq!(notefusion(&["frobnicate"]).status.code(), Some(1));
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, "5");
    let base = ["train", "--task", "ihm", "--data", data.to_str().unwrap(), "--out", "/nonexistent/x"];
    let mut bad_variant = base.to_vec();
    bad_variant.extend(["--variant", "foo"]);
    assert_eq!(notefusion(&bad_variant).status.code(), Some(1));
    let mut bad_key = base.to_vec();
    bad_key.extend(["--variant", "baseline", "--set", "model.colour=blue"]);
    assert_eq!(notefusion(&bad_key).status.code(), Some(1));
    let mut bad_value = base.to_vec();
    bad_value.extend(["--variant", "baseline", "--set", "train.epochs=0"]);
    assert_eq!(notefusion(&bad_value).status.code(), Some(1));
}

#[test]
fn missing_data_is_a_runtime_error() {
    let out = notefusion(&[
        "train",
        "--task",
        "ihm",
        "--variant",
        "baseline",
        "--data",
        "/nonexistent/data",
        "--out",
        "/tmp/unused",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn quick_selfcheck_passes() {
    let out = notefusion(&["selfcheck", "--quick"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.lines().filter(|l| l.starts_with("PASS ")).count() >= 15);
    assert!(!text.contains("FAIL"));
}

#[test]
fn experiment_prints_one_row_per_variant() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, "30");
    let runs = tmp.path().join("runs.jsonl");
    let out = notefusion(&[
        "experiment",
        "--data",
        data.to_str().unwrap(),
        "--tasks",
        "los",
        "--variants",
        "baseline,text_only",
        "--seeds",
        "1,2",
        "--runs",
        runs.to_str().unwrap(),
        "--set",
        "train.epochs=1",
        "--set",
        "model.lstm_hidden=4",
        "--set",
        "model.filters_per_width=4",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = json_lines(&out);
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0]["row"], "Baseline (No Text)");
    assert_eq!(rows[1]["metric"], "kappa");
    assert_eq!(std::fs::read_to_string(runs).unwrap().lines().count(), 4);
}
