//! The experiment steps shared by the subcommands and the recipe runner.

use std::path::{Path, PathBuf};

use scvae_baselines::{fit_score, DetectorKind, FlatDataset};
use scvae_core::bench::{bench_pair, render_pair, BenchConfig, PairReport};
use scvae_core::checkpoint::load_checkpoint_as;
use scvae_core::metrics::{
    accuracy, match_general, prauc, threshold_by_ratio, vote_matrix, MetricRecord,
};
use scvae_core::vae::{score_windows, train, TrainReport};
use scvae_core::zoo::build;
use scvae_core::{save_checkpoint, ModelKind, Tensor, VaeModel, WindowedDataset};
use serde::{Deserialize, Serialize};

use crate::config::{content_hash, ModelChoice, RunConfig};
use crate::datasets::{create_parent, prepare};
use crate::error::{CliError, CliResult, ExitKind, ResultExt};

pub const SCORES_FILE: &str = "scores.json";
pub const CHECKPOINT_FILE: &str = "model.ckpt";

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    create_parent(path)?;
    let text = serde_json::to_string_pretty(value).expect("reports serialize to JSON");
    std::fs::write(path, text + "\n").or_kind(ExitKind::Io, format!("writing {}", path.display()))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path)
        .or_kind(ExitKind::Io, format!("reading {}", path.display()))?;
    serde_json::from_str(&text).or_kind(ExitKind::Data, format!("parsing {}", path.display()))
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    create_parent(path)?;
    std::fs::write(path, text).or_kind(ExitKind::Io, format!("writing {}", path.display()))
}

/// One score per window, with everything needed to reproduce it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreFile {
    pub config_hash: String,
    pub dataset: String,
    pub tw: usize,
    pub model: ModelChoice,
    pub provenance: String,
    pub scores: Vec<f64>,
    pub labels: Option<Vec<u8>>,
    pub config: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub config_hash: String,
    pub model: ModelKind,
    pub param_count: usize,
    pub report: TrainReport,
}

fn vae_kind(cfg: &RunConfig) -> CliResult<ModelKind> {
    match cfg.model {
        ModelChoice::Vae(k) => Ok(k),
        ModelChoice::Detector(d) => Err(CliError::usage(format!(
            "{d} is fitted transductively by `score`; `train` applies to CNN_VAE and SCVAE only"
        ))),
    }
}

pub fn train_vae(cfg: &RunConfig, ds: &WindowedDataset) -> CliResult<(VaeModel<f64>, TrainReport)> {
    let kind = vae_kind(cfg)?;
    let r = cfg.resolved();
    let mut model = build(
        kind,
        ds.time_window,
        ds.num_features(),
        r.train.latent_dim,
        r.seed,
    )
    .map_err(scvae_core::VaeError::from)?;
    let report = train(&mut model, &ds.windows, &r.train)?;
    Ok((model, report))
}

/// Single-precision scores: the deployed path, and what a reloaded checkpoint reproduces.
pub fn score_vae(
    cfg: &RunConfig,
    model: &VaeModel<f32>,
    ds: &WindowedDataset,
) -> CliResult<Vec<f64>> {
    let r = cfg.resolved();
    let windows: Tensor<f32> = ds.windows.cast();
    Ok(score_windows(
        model,
        &windows,
        r.train.mc_samples_score,
        r.seed,
    )?)
}

pub fn score_detector(
    cfg: &RunConfig,
    kind: DetectorKind,
    ds: &WindowedDataset,
) -> CliResult<Vec<f64>> {
    let (_, width, values) = ds.flattened();
    let data = FlatDataset::new(width, values.to_vec())?;
    Ok(fit_score(kind, &data, &cfg.resolved().detectors)?)
}

fn score_file(cfg: &RunConfig, ds: &WindowedDataset, scores: Vec<f64>) -> ScoreFile {
    ScoreFile {
        config_hash: cfg.hash(),
        dataset: cfg.dataset.clone(),
        tw: cfg.tw,
        model: cfg.model,
        provenance: ds.provenance.clone(),
        scores,
        labels: ds.labels.clone(),
        config: cfg.resolved(),
    }
}

pub fn cmd_prepare(cfg: &RunConfig) -> CliResult<serde_json::Value> {
    let p = prepare(cfg)?;
    Ok(serde_json::json!({
        "cache": p.cache_path,
        "cache_hit": p.cache_hit,
        "windows": p.dataset.len(),
        "features": p.dataset.num_features(),
        "columns": p.dataset.columns,
        "tw": p.dataset.time_window,
        "anomalous_windows": p.dataset.labels.as_ref().map(|l| l.iter().filter(|&&v| v == 1).count()),
        "provenance": p.dataset.provenance,
    }))
}

pub fn cmd_train(cfg: &RunConfig) -> CliResult<serde_json::Value> {
    cfg.validate()?;
    let kind = vae_kind(cfg)?;
    let ds = prepare(cfg)?.dataset;
    let (model, report) = train_vae(cfg, &ds)?;
    let dir = cfg.run_dir();
    let ckpt = dir.join(CHECKPOINT_FILE);
    create_parent(&ckpt)?;
    save_checkpoint(&model, &ckpt)?;
    let log = TrainLog {
        config_hash: cfg.hash(),
        model: kind,
        param_count: model.param_count(),
        report,
    };
    write_json(&dir.join("train_log.json"), &log)?;
    write_json(&dir.join("config.json"), &cfg.resolved())?;
    Ok(serde_json::json!({
        "checkpoint": ckpt,
        "config_hash": log.config_hash,
        "param_count": log.param_count,
        "final_loss": log.report.loss_history.last(),
    }))
}

/// Scores with the run directory's checkpoint (VAEs) or a transductive fit (detectors).
pub fn cmd_score(cfg: &RunConfig, checkpoint: Option<&Path>) -> CliResult<serde_json::Value> {
    cfg.validate()?;
    let ds = prepare(cfg)?.dataset;
    let dir = cfg.run_dir();
    let scores = match cfg.model {
        ModelChoice::Vae(kind) => {
            let path = checkpoint
                .map(Path::to_path_buf)
                .unwrap_or_else(|| dir.join(CHECKPOINT_FILE));
            let model = load_checkpoint_as(&path, kind)
                .map_err(|e| CliError::from(e).context(format!("loading {}", path.display())))?;
            score_vae(cfg, &model, &ds)?
        }
        ModelChoice::Detector(kind) => score_detector(cfg, kind, &ds)?,
    };
    let file = score_file(cfg, &ds, scores);
    let path = dir.join(SCORES_FILE);
    write_json(&path, &file)?;
    Ok(
        serde_json::json!({ "scores": path, "windows": file.scores.len(), "config_hash": file.config_hash }),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub records: Vec<MetricRecord>,
}

pub fn evaluate(file: &ScoreFile) -> CliResult<EvalReport> {
    let labels = file.labels.as_ref().ok_or_else(|| {
        CliError::data(format!(
            "{} scores carry no labels; PRAUC needs labeled data",
            file.dataset
        ))
    })?;
    let value = prauc(&file.scores, labels)?;
    Ok(EvalReport {
        records: vec![MetricRecord {
            metric: "prauc".into(),
            dataset: file.dataset.clone(),
            tw: file.tw,
            model: file.model.to_string(),
            value,
            config_hash: file.config_hash.clone(),
        }],
    })
}

/// Writes `metrics.json` and `metrics.txt` next to each score file.
pub fn cmd_eval(score_paths: &[PathBuf]) -> CliResult<serde_json::Value> {
    if score_paths.is_empty() {
        return Err(CliError::usage("eval needs at least one score file"));
    }
    let mut all = Vec::new();
    for path in score_paths {
        let file: ScoreFile = read_json(path)?;
        let report = evaluate(&file)?;
        let dir = path.parent().unwrap_or(Path::new("."));
        write_json(&dir.join("metrics.json"), &report)?;
        let kv: String = report.records.iter().map(|r| r.to_kv() + "\n").collect();
        write_text(&dir.join("metrics.txt"), &kv)?;
        log::info!("{}", kv.trim_end());
        all.extend(report.records);
    }
    Ok(serde_json::to_value(EvalReport { records: all }).expect("serializable"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthAgreement {
    pub consensus_accuracy: f64,
    pub per_model_accuracy: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusReport {
    pub config_hash: String,
    pub dataset: String,
    pub tw: usize,
    pub ratio: f64,
    pub majority: usize,
    pub models: Vec<String>,
    pub input_hashes: Vec<String>,
    /// Agreement of each model's flags with the consensus labels.
    pub per_model_match: Vec<f64>,
    pub consensus_anomalies: usize,
    /// Present when the score files carry ground-truth labels.
    pub ground_truth: Option<GroundTruthAgreement>,
}

pub const ENSEMBLE_SIZE: usize = 6;

/// Majority vote over thresholded scores: a window is anomalous when at least
/// `⌈M/2⌉` models (3 of 6) flag it.
pub fn consensus(
    files: &[ScoreFile],
    ratio: f64,
    override_ensemble: bool,
) -> CliResult<ConsensusReport> {
    if files.len() != ENSEMBLE_SIZE && !override_ensemble {
        return Err(CliError::usage(format!(
            "consensus needs the 6 models (IF, LOF, OCSVM, EE, CNN_VAE, SCVAE), got {} score file(s); pass --override-ensemble to relax",
            files.len()
        )));
    }
    if !override_ensemble {
        let missing: Vec<String> = ModelChoice::ENSEMBLE
            .iter()
            .filter(|m| !files.iter().any(|f| f.model == **m))
            .map(ToString::to_string)
            .collect();
        if !missing.is_empty() {
            return Err(CliError::usage(format!(
                "consensus needs one score file from each of the 6 models; missing {}",
                missing.join(", ")
            )));
        }
    }
    let first = files
        .first()
        .ok_or_else(|| CliError::usage("consensus needs score files"))?;
    for f in files {
        if f.scores.len() != first.scores.len() || f.tw != first.tw || f.dataset != first.dataset {
            return Err(CliError::data(format!(
                "score files disagree: {} {}({}) has {} windows, {} {}({}) has {}",
                first.model,
                first.dataset,
                first.tw,
                first.scores.len(),
                f.model,
                f.dataset,
                f.tw,
                f.scores.len()
            )));
        }
    }
    let flags = files
        .iter()
        .map(|f| threshold_by_ratio(&f.scores, ratio))
        .collect::<Result<Vec<_>, _>>()?;
    let majority = files.len().div_ceil(2);
    let result = match_general(&vote_matrix(&flags)?, majority)?;
    let ground_truth = match &first.labels {
        Some(truth) => Some(GroundTruthAgreement {
            consensus_accuracy: accuracy(&result.consensus, truth)?,
            per_model_accuracy: flags
                .iter()
                .map(|f| accuracy(f, truth))
                .collect::<Result<_, _>>()?,
        }),
        None => None,
    };
    let input_hashes: Vec<String> = files.iter().map(|f| f.config_hash.clone()).collect();
    Ok(ConsensusReport {
        config_hash: content_hash(&(&input_hashes, ratio)),
        dataset: first.dataset.clone(),
        tw: first.tw,
        ratio,
        majority,
        models: files.iter().map(|f| f.model.to_string()).collect(),
        input_hashes,
        per_model_match: result.per_model_match,
        consensus_anomalies: result.consensus.iter().filter(|&&c| c == 1).count(),
        ground_truth,
    })
}

pub fn cmd_consensus(
    score_paths: &[PathBuf],
    ratio: f64,
    override_ensemble: bool,
    out: &Path,
) -> CliResult<serde_json::Value> {
    if score_paths.len() != ENSEMBLE_SIZE && !override_ensemble {
        return Err(CliError::usage(format!(
            "consensus needs the 6 models (IF, LOF, OCSVM, EE, CNN_VAE, SCVAE), got {} score file(s); pass --override-ensemble to relax",
            score_paths.len()
        )));
    }
    let files = score_paths
        .iter()
        .map(|p| read_json::<ScoreFile>(p))
        .collect::<CliResult<Vec<_>>>()?;
    let report = consensus(&files, ratio, override_ensemble)?;
    let path = out.join(&report.config_hash).join("consensus.json");
    write_json(&path, &report)?;
    Ok(serde_json::to_value(&report).expect("serializable"))
}

pub fn cmd_bench(cfg: &RunConfig) -> CliResult<serde_json::Value> {
    cfg.validate()?;
    let ds = prepare(cfg)?.dataset;
    let r = cfg.resolved();
    let bench = BenchConfig {
        train: r.train.clone(),
        repetitions: r.bench.repetitions,
        warmups: r.bench.warmups,
        latency_windows: r.bench.latency_windows,
    };
    let pair: PairReport = bench_pair(&cfg.dataset, &ds, &bench)?;
    let dir = cfg.run_dir();
    write_json(&dir.join("bench.json"), &pair)?;
    let table = render_pair(&pair);
    write_text(&dir.join("bench.txt"), &table)?;
    eprint!("{table}");
    Ok(serde_json::to_value(&pair).expect("serializable"))
}

pub fn cmd_describe(checkpoint: &Path) -> CliResult<String> {
    let model = scvae_core::load_checkpoint(checkpoint)
        .map_err(|e| CliError::from(e).context(format!("loading {}", checkpoint.display())))?;
    Ok(format!(
        "{}\n{}parameters {}\n",
        model.arch().summary(),
        model.arch(),
        model.param_count()
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellOutcome {
    pub config_hash: String,
    pub dataset: String,
    pub tw: usize,
    pub model: ModelChoice,
    pub scores: PathBuf,
    pub prauc: Option<f64>,
}

/// prepare → train → score → eval for one cell, with the same files the
/// individual commands write.
pub fn run_cell(cfg: &RunConfig) -> CliResult<(CellOutcome, ScoreFile)> {
    cfg.validate()?;
    let ds = prepare(cfg)?.dataset;
    let dir = cfg.run_dir();
    let scores = match cfg.model {
        ModelChoice::Vae(kind) => {
            let (model, report) = train_vae(cfg, &ds)?;
            let ckpt = dir.join(CHECKPOINT_FILE);
            create_parent(&ckpt)?;
            save_checkpoint(&model, &ckpt)?;
            write_json(
                &dir.join("train_log.json"),
                &TrainLog {
                    config_hash: cfg.hash(),
                    model: kind,
                    param_count: model.param_count(),
                    report,
                },
            )?;
            score_vae(cfg, &model.cast::<f32>(), &ds)?
        }
        ModelChoice::Detector(kind) => score_detector(cfg, kind, &ds)?,
    };
    write_json(&dir.join("config.json"), &cfg.resolved())?;
    let file = score_file(cfg, &ds, scores);
    let path = dir.join(SCORES_FILE);
    write_json(&path, &file)?;
    let prauc = match file.labels {
        Some(_) => {
            let report = evaluate(&file)?;
            write_json(&dir.join("metrics.json"), &report)?;
            write_text(
                &dir.join("metrics.txt"),
                &report
                    .records
                    .iter()
                    .map(|r| r.to_kv() + "\n")
                    .collect::<String>(),
            )?;
            Some(report.records[0].value)
        }
        None => None,
    };
    Ok((
        CellOutcome {
            config_hash: file.config_hash.clone(),
            dataset: cfg.dataset.clone(),
            tw: cfg.tw,
            model: cfg.model,
            scores: path,
            prauc,
        },
        file,
    ))
}

/// Runs every cell, `jobs` at a time; the result order follows `cells`.
pub fn run_cells(cells: &[RunConfig], jobs: usize) -> Vec<CliResult<CellOutcome>> {
    let next = std::sync::atomic::AtomicUsize::new(0);
    let results: Vec<std::sync::Mutex<Option<CliResult<CellOutcome>>>> =
        cells.iter().map(|_| std::sync::Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..jobs.max(1).min(cells.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if i >= cells.len() {
                    break;
                }
                log::info!(
                    "cell {}/{}: {} {}({})",
                    i + 1,
                    cells.len(),
                    cells[i].model,
                    cells[i].dataset,
                    cells[i].tw
                );
                let r = run_cell(&cells[i]).map(|(o, _)| o);
                *results[i].lock().expect("no poisoned cells") = Some(r);
            });
        }
    });
    results
        .into_iter()
        .map(|m| {
            m.into_inner()
                .expect("no poisoned cells")
                .expect("every cell ran")
        })
        .collect()
}

pub fn cmd_recipe(cells: &[RunConfig], jobs: usize) -> CliResult<serde_json::Value> {
    let results = run_cells(cells, jobs);
    let mut outcomes = Vec::new();
    let mut failures = Vec::new();
    for (cell, r) in cells.iter().zip(results) {
        match r {
            Ok(o) => {
                log::info!(
                    "{:<8} {:<20} tw={:<3} prauc={}  {}",
                    o.model.to_string(),
                    o.dataset,
                    o.tw,
                    o.prauc
                        .map(|p| format!("{p:.4}"))
                        .unwrap_or_else(|| "-".into()),
                    o.config_hash
                );
                outcomes.push(o);
            }
            Err(e) => {
                eprintln!("{} {}({}) failed: {e}", cell.model, cell.dataset, cell.tw);
                failures.push((cell.clone(), e));
            }
        }
    }
    if let Some((cell, e)) = failures.into_iter().next() {
        return Err(e.context(format!(
            "recipe cell {} {}({})",
            cell.model, cell.dataset, cell.tw
        )));
    }
    let out = cells.first().map(|c| c.out.clone()).unwrap_or_default();
    let hashes: Vec<&String> = outcomes.iter().map(|o| &o.config_hash).collect();
    let path = out.join(format!("recipe-{}.json", content_hash(&hashes)));
    write_json(&path, &outcomes)?;
    Ok(serde_json::json!({ "summary": path, "cells": outcomes }))
}
