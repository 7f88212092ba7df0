//! End-to-end runs of the `scvae` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use scvae_cli::pipeline::{read_json, run_cell, write_json, ScoreFile};
use scvae_cli::{ModelChoice, RunConfig};
use serde_json::{json, Value};

fn scvae(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scvae"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env("SCVAE_DATA_DIR", "/nonexistent-scvae-data")
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is one JSON document")
}

fn error_doc(out: &Output, code: i32) -> Value {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stderr = String::from_utf8_lossy(&out.stderr);
    let start = stderr.find('{').expect("JSON error document on stderr");
    let doc: Value = serde_json::from_str(&stderr[start..]).expect("error document parses");
    assert_eq!(doc["error"]["exit_code"], code);
    doc
}

fn write_config(dir: &Path, name: &str, value: Value) -> String {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(&value).unwrap()).unwrap();
    path.to_str().unwrap().to_string()
}

fn small(dir: &Path, model: &str) -> Value {
    json!({
        "dataset": "cnc_a",
        "tw": 4,
        "model": model,
        "train": {"epochs": 1, "latent_dim": 4, "mc_samples_score": 2},
        "detectors": {"iforest": {"n_trees": 20}, "elliptic": {"n_restarts": 2}},
        "out": dir.join("runs"),
    })
}

#[test]
fn help_and_version_exit_zero() {
    assert!(scvae(&["--help"]).status.success());
    assert!(scvae(&["--version"]).status.success());
}

#[test]
fn usage_errors_exit_two_with_json() {
    let doc = error_doc(&scvae(&["--model", "FOO", "prepare"]), 2);
    assert_eq!(doc["error"]["kind"], "usage");
    error_doc(&scvae(&["no-such-command"]), 2);
    error_doc(&scvae(&["--tw", "0", "--dataset", "cnc_a", "prepare"]), 2);

    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        json!({"dataset": "cnc_a", "bogus": 1}),
    );
    error_doc(&scvae(&["--config", &cfg, "prepare"]), 2);
}

#[test]
fn missing_dataset_is_an_io_error_naming_the_override() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let doc = error_doc(
        &scvae(&["--dataset", "occupancy", "--out", out, "prepare"]),
        5,
    );
    let text = doc.to_string();
    assert!(text.contains("SCVAE_DATA_DIR"), "{text}");
}

#[test]
fn malformed_schema_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    std::fs::write(&data, "1,2\n3,4\n5,6\n").unwrap();
    let schema = dir.path().join("bad.schema");
    std::fs::write(&schema, "@delimiter ,\na: feature\nb: sometimes\n").unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        json!({"dataset": "custom", "data_path": data, "schema": schema, "tw": 2, "out": dir.path().join("runs")}),
    );
    let out = scvae(&["--config", &cfg, "prepare"]);
    assert!(!out.status.success());
    assert_ne!(out.status.code(), Some(0));
}

#[test]
fn custom_csv_with_schema_prepares() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    let rows: String = (0..40)
        .map(|i| format!("{},{},{}\n", i, (i as f64).sin(), u8::from(i % 13 == 0)))
        .collect();
    std::fs::write(&data, rows).unwrap();
    let schema = dir.path().join("s.schema");
    std::fs::write(&schema, "@delimiter ,\nt: feature\nx: feature\ny: label\n").unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        json!({"dataset": "custom", "data_path": data, "schema": schema, "tw": 4, "out": dir.path().join("runs")}),
    );
    let v = stdout_json(&scvae(&["--config", &cfg, "prepare"]));
    assert_eq!(v["windows"], 37);
    assert_eq!(v["features"], 2);
}

#[test]
fn prepare_hits_the_cache_on_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", small(dir.path(), "IF"));
    let first = stdout_json(&scvae(&["--config", &cfg, "prepare"]));
    let second = stdout_json(&scvae(&["--config", &cfg, "prepare"]));
    assert_eq!(first["cache_hit"], false);
    assert_eq!(second["cache_hit"], true);
    assert_eq!(first["windows"], second["windows"]);
    assert_eq!(first["features"], 31);
}

fn composed(cfg: &str, out: &Path, vae: bool) -> ScoreFile {
    stdout_json(&scvae(&["--config", cfg, "prepare"]));
    if vae {
        stdout_json(&scvae(&["--config", cfg, "train"]));
    }
    let scored = stdout_json(&scvae(&["--config", cfg, "score"]));
    let path = PathBuf::from(scored["scores"].as_str().unwrap());
    assert!(path.starts_with(out));
    let eval = stdout_json(&scvae(&["eval", path.to_str().unwrap()]));
    let file: ScoreFile = read_json(&path).unwrap();
    let prauc = eval["records"][0]["value"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&prauc));
    file
}

#[test]
fn commands_compose_to_the_recipe_output() {
    for (model, vae) in [("SCVAE", true), ("IF", false)] {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let cfg_a = write_config(a.path(), "c.json", small(a.path(), model));
        let cfg_b = write_config(b.path(), "c.json", small(b.path(), model));
        let stepwise = composed(&cfg_a, a.path(), vae);

        let recipe = stdout_json(&scvae(&["--config", &cfg_b, "recipe"]));
        let path = recipe["cells"][0]["scores"].as_str().unwrap();
        let oneshot: ScoreFile = read_json(Path::new(path)).unwrap();
        assert_eq!(stepwise.scores, oneshot.scores, "{model}");
        assert_eq!(stepwise.config_hash, oneshot.config_hash);
        assert_eq!(stepwise.labels, oneshot.labels);
        let m_a: Value = read_json(
            &a.path()
                .join("runs")
                .join(&stepwise.config_hash)
                .join("metrics.json"),
        )
        .unwrap();
        let m_b: Value = read_json(
            &b.path()
                .join("runs")
                .join(&oneshot.config_hash)
                .join("metrics.json"),
        )
        .unwrap();
        assert_eq!(m_a, m_b);
    }
}

#[test]
fn describe_prints_the_layer_listing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", small(dir.path(), "SCVAE"));
    stdout_json(&scvae(&["--config", &cfg, "train"]));
    let hash = RunConfig::load(Path::new(&cfg)).unwrap().hash();
    let ckpt = dir.path().join("runs").join(hash).join("model.ckpt");
    let out = scvae(&["describe", ckpt.to_str().unwrap()]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("SCVAE"), "{text}");
    for needle in [
        "encoder",
        "decoder",
        "fire squeeze",
        "fire extend1",
        "fire extend2",
        "parameters",
    ] {
        assert!(text.contains(needle), "missing `{needle}` in\n{text}");
    }

    std::fs::write(&ckpt, b"not a checkpoint").unwrap();
    let out = scvae(&["describe", ckpt.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
}

fn fake_scores(dir: &Path, n: usize) -> Vec<String> {
    let truth: Vec<u8> = (0..n).map(|i| u8::from(i % 20 == 0)).collect();
    ModelChoice::ENSEMBLE
        .iter()
        .enumerate()
        .map(|(m, &model)| {
            let cfg = RunConfig {
                dataset: "cnc_a".into(),
                model,
                ..RunConfig::default()
            };
            let scores = (0..n)
                .map(|i| f64::from(truth[i]) * 2.0 + ((i * 7 + m * 13) % 17) as f64 / 17.0)
                .collect();
            let file = ScoreFile {
                config_hash: cfg.hash(),
                dataset: cfg.dataset.clone(),
                tw: cfg.tw,
                model,
                provenance: "test".into(),
                scores,
                labels: Some(truth.clone()),
                config: cfg,
            };
            let path = dir.join(format!("{model}.json"));
            write_json(&path, &file).unwrap();
            path.to_str().unwrap().to_string()
        })
        .collect()
}

#[test]
fn consensus_requires_the_six_model_ensemble() {
    let dir = tempfile::tempdir().unwrap();
    let files = fake_scores(dir.path(), 200);
    let out_dir = dir.path().join("runs");
    let out = out_dir.to_str().unwrap();

    let five: Vec<&str> = files[..5].iter().map(String::as_str).collect();
    let mut args = vec!["--out", out, "consensus"];
    args.extend(&five);
    let doc = error_doc(&scvae(&args), 2);
    assert!(
        doc["error"]["message"]
            .as_str()
            .unwrap()
            .contains("6 models"),
        "{doc}"
    );

    let mut dup: Vec<&str> = five.clone();
    dup.push(files[0].as_str());
    let mut args = vec!["--out", out, "consensus"];
    args.extend(&dup);
    error_doc(&scvae(&args), 2);

    let mut args = vec!["--out", out, "--override-ensemble", "consensus"];
    args.extend(&five);
    let v = stdout_json(&scvae(&args));
    assert_eq!(v["majority"], 3);

    let mut args = vec!["--out", out, "consensus"];
    args.extend(files.iter().map(String::as_str));
    let v = stdout_json(&scvae(&args));
    assert_eq!(v["majority"], 3);
    assert_eq!(v["models"].as_array().unwrap().len(), 6);
    for m in v["per_model_match"].as_array().unwrap() {
        assert_eq!(m.as_f64().unwrap(), 1.0);
    }
    assert_eq!(v["ground_truth"]["consensus_accuracy"], 1.0);
    let hash = v["config_hash"].as_str().unwrap();
    assert!(out_dir.join(hash).join("consensus.json").exists());
}

#[test]
fn library_cell_matches_binary_cell() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg: RunConfig = serde_json::from_value(small(dir.path(), "LOF")).unwrap();
    let (outcome, file) = run_cell(&cfg).unwrap();
    assert_eq!(outcome.config_hash, cfg.hash());
    cfg.out = dir.path().join("other");
    let path = write_config(dir.path(), "c.json", serde_json::to_value(&cfg).unwrap());
    let scored = stdout_json(&scvae(&["--config", &path, "score"]));
    let again: ScoreFile = read_json(Path::new(scored["scores"].as_str().unwrap())).unwrap();
    assert_eq!(file.scores, again.scores);
}
