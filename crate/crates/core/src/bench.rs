//! Training-time, per-window latency and size measurements for the two
//! architectures, with JSON, text-table and CSV output.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::serialized_size;
use crate::data::WindowedDataset;
use crate::metrics::{prauc, MetricError};
use crate::model::VaeModel;
use crate::tensor::{Real, Tensor};
use crate::vae::{anomaly_score, score_windows, train, TrainConfig, VaeError};
use crate::zoo::{build, ModelKind};

pub const MIN_REPETITIONS: usize = 30;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("benchmark needs at least {MIN_REPETITIONS} repetitions, got {0}")]
    TooFewRepetitions(usize),
    #[error("benchmark dataset is empty")]
    EmptyDataset,
    #[error(transparent)]
    Vae(#[from] VaeError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("could not write timings: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    /// Seconds per window.
    pub mean: f64,
    pub p50: f64,
    pub p95: f64,
    pub repetitions: usize,
    pub warmups: usize,
    pub windows: usize,
    pub mc_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub hardware: String,
    pub precision: String,
    pub threads: usize,
}

impl Environment {
    pub fn detect(precision: &str) -> Self {
        let cpu = std::fs::read_to_string("/proc/cpuinfo")
            .ok()
            .and_then(|s| {
                s.lines()
                    .find(|l| l.starts_with("model name"))
                    .and_then(|l| l.split_once(':'))
                    .map(|(_, v)| v.trim().to_string())
            })
            .unwrap_or_else(|| "unknown cpu".into());
        let cores = std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1);
        Environment {
            hardware: format!(
                "{cpu} ({} {}, {cores} logical cores)",
                std::env::consts::OS,
                std::env::consts::ARCH
            ),
            precision: precision.into(),
            threads: 1,
        }
    }
}

/// Nearest-rank percentile of sorted data.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = ((p / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

pub fn summarize(
    timings: &[f64],
    repetitions: usize,
    warmups: usize,
    windows: usize,
    mc_samples: usize,
) -> LatencyStats {
    let mut sorted = timings.to_vec();
    sorted.sort_by(f64::total_cmp);
    LatencyStats {
        mean: timings.iter().sum::<f64>() / timings.len() as f64,
        p50: percentile(&sorted, 50.0),
        p95: percentile(&sorted, 95.0),
        repetitions,
        warmups,
        windows,
        mc_samples,
    }
}

/// Scores every window of `[N, tw, #f]` `repetitions` times on the calling
/// thread, after `warmups` untimed passes. Returns the statistics and all
/// `repetitions·N` raw per-window timings in repetition-major order.
pub fn bench_inference<T: Real>(
    model: &VaeModel<T>,
    windows: &Tensor<T>,
    repetitions: usize,
    warmups: usize,
    mc_samples: usize,
    seed: u64,
) -> Result<(LatencyStats, Vec<f64>), BenchError> {
    if repetitions < MIN_REPETITIONS {
        return Err(BenchError::TooFewRepetitions(repetitions));
    }
    let n = windows.shape().first().copied().unwrap_or(0);
    if n == 0 || windows.is_empty() {
        return Err(BenchError::EmptyDataset);
    }
    let d = windows.len() / n;
    let (tw, nf) = (model.arch().time_window, model.arch().num_features);
    let singles: Vec<Tensor<T>> = (0..n)
        .map(|i| Tensor::new([tw, nf], windows.data()[i * d..(i + 1) * d].to_vec()))
        .collect::<Result<_, _>>()
        .map_err(VaeError::from)?;
    for _ in 0..warmups {
        for (i, x) in singles.iter().enumerate() {
            std::hint::black_box(anomaly_score(model, x, mc_samples, seed, i as u64)?);
        }
    }
    let mut timings = Vec::with_capacity(repetitions * n);
    for _ in 0..repetitions {
        for (i, x) in singles.iter().enumerate() {
            let start = Instant::now();
            std::hint::black_box(anomaly_score(
                model,
                std::hint::black_box(x),
                mc_samples,
                seed,
                i as u64,
            )?);
            timings.push(start.elapsed().as_secs_f64());
        }
    }
    Ok((
        summarize(&timings, repetitions, warmups, n, mc_samples),
        timings,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub model: ModelKind,
    pub dataset: String,
    pub tw: usize,
    /// Seconds; absent when the model was not trained by the harness.
    pub training_wall_time: Option<f64>,
    pub inference_latency: LatencyStats,
    pub param_count: usize,
    pub serialized_bytes: usize,
    pub prauc: Option<f64>,
    pub environment: Environment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRatios {
    pub training_time: Option<f64>,
    pub latency_mean: f64,
    pub serialized_bytes: f64,
    pub param_count: f64,
}

/// SCVAE and CNN-VAE measured under one configuration; ratios are SCVAE / CNN-VAE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairReport {
    pub cnn_vae: BenchReport,
    pub scvae: BenchReport,
    pub ratios: PairRatios,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub train: TrainConfig,
    pub repetitions: usize,
    pub warmups: usize,
    /// Windows timed per repetition; the first `latency_windows` of the dataset.
    pub latency_windows: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            train: TrainConfig::default(),
            repetitions: MIN_REPETITIONS,
            warmups: 3,
            latency_windows: 64,
        }
    }
}

fn first_windows(ds: &WindowedDataset, count: usize) -> Tensor<f32> {
    let n = ds.len().min(count);
    let d = ds.time_window * ds.num_features();
    Tensor::new(
        [n, ds.time_window, ds.num_features()],
        ds.windows.data()[..n * d]
            .iter()
            .map(|&v| v as f32)
            .collect(),
    )
    .expect("prefix of window tensor")
}

/// Trains one model, then measures size, f32 latency and (if labels exist) PRAUC.
pub fn bench_model(
    kind: ModelKind,
    dataset_name: &str,
    ds: &WindowedDataset,
    config: &BenchConfig,
) -> Result<BenchReport, BenchError> {
    if ds.is_empty() {
        return Err(BenchError::EmptyDataset);
    }
    let t = &config.train;
    let mut model = build(
        kind,
        ds.time_window,
        ds.num_features(),
        t.latent_dim,
        t.seed,
    )
    .map_err(VaeError::from)?;
    let start = Instant::now();
    train(&mut model, &ds.windows, t)?;
    let training_wall_time = start.elapsed().as_secs_f64();
    let frozen = model.cast::<f32>();
    let (latency, _) = bench_inference(
        &frozen,
        &first_windows(ds, config.latency_windows),
        config.repetitions,
        config.warmups,
        t.mc_samples_score,
        t.seed,
    )?;
    let prauc = match &ds.labels {
        Some(labels) => {
            let windows: Tensor<f32> = ds.windows.cast();
            let scores = score_windows(&frozen, &windows, t.mc_samples_score, t.seed)?;
            Some(prauc(&scores, labels)?)
        }
        None => None,
    };
    Ok(BenchReport {
        model: kind,
        dataset: dataset_name.into(),
        tw: ds.time_window,
        training_wall_time: Some(training_wall_time),
        inference_latency: latency,
        param_count: model.param_count(),
        serialized_bytes: serialized_size(&model),
        prauc,
        environment: Environment::detect("f32"),
    })
}

pub fn pair_ratios(cnn: &BenchReport, sc: &BenchReport) -> PairRatios {
    PairRatios {
        training_time: match (sc.training_wall_time, cnn.training_wall_time) {
            (Some(a), Some(b)) if b > 0.0 => Some(a / b),
            _ => None,
        },
        latency_mean: sc.inference_latency.mean / cnn.inference_latency.mean,
        serialized_bytes: sc.serialized_bytes as f64 / cnn.serialized_bytes as f64,
        param_count: sc.param_count as f64 / cnn.param_count as f64,
    }
}

/// Both architectures with identical seeds and configuration.
pub fn bench_pair(
    dataset_name: &str,
    ds: &WindowedDataset,
    config: &BenchConfig,
) -> Result<PairReport, BenchError> {
    let cnn_vae = bench_model(ModelKind::CnnVae, dataset_name, ds, config)?;
    let scvae = bench_model(ModelKind::Scvae, dataset_name, ds, config)?;
    let ratios = pair_ratios(&cnn_vae, &scvae);
    Ok(PairReport {
        cnn_vae,
        scvae,
        ratios,
    })
}

fn fmt_time(seconds: Option<f64>) -> String {
    match seconds {
        Some(s) if s >= 60.0 => format!("{}m {:.0}sec", (s / 60.0).floor(), s % 60.0),
        Some(s) => format!("{s:.1}sec"),
        None => "-".into(),
    }
}

/// Plain-text table: learning time, inference time, memory, PRAUC.
pub fn render_table(reports: &[&BenchReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<8} {:<10} {:>4} {:>14} {:>16} {:>12} {:>12} {:>8}",
        "Model",
        "Dataset",
        "tw",
        "Learning Time",
        "Inference (s)",
        "Params",
        "Memory (MB)",
        "PRAUC"
    );
    for r in reports {
        let _ = writeln!(
            out,
            "{:<8} {:<10} {:>4} {:>14} {:>16.6} {:>12} {:>12.3} {:>8}",
            r.model.to_string(),
            r.dataset,
            r.tw,
            fmt_time(r.training_wall_time),
            r.inference_latency.mean,
            r.param_count,
            r.serialized_bytes as f64 / 1e6,
            r.prauc
                .map(|p| format!("{:.2}", 100.0 * p))
                .unwrap_or_else(|| "-".into()),
        );
    }
    out
}

pub fn render_pair(pair: &PairReport) -> String {
    let mut out = render_table(&[&pair.cnn_vae, &pair.scvae]);
    let r = &pair.ratios;
    let _ = writeln!(
        out,
        "SCVAE/CNN-VAE  training {}  latency {:.3}  size {:.3}  params {:.3}",
        r.training_time
            .map(|t| format!("{t:.3}"))
            .unwrap_or_else(|| "-".into()),
        r.latency_mean,
        r.serialized_bytes,
        r.param_count
    );
    out
}

/// One row per timed score: model, repetition, window, seconds.
pub fn write_timings_csv(
    path: &Path,
    model: ModelKind,
    timings: &[f64],
    windows: usize,
) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["model", "repetition", "window", "seconds"])?;
    for (i, t) in timings.iter().enumerate() {
        w.write_record([
            model.to_string(),
            (i / windows).to_string(),
            (i % windows).to_string(),
            format!("{t:e}"),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
