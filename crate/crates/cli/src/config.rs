//! Run configuration: a flat JSON document whose content hash names every output directory.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use scvae_baselines::{BaselineConfig, DetectorKind};
use scvae_core::{ModelKind, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult, ExitKind, ResultExt};

/// The six members of the detector ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelChoice {
    Vae(ModelKind),
    Detector(DetectorKind),
}

impl ModelChoice {
    pub const ENSEMBLE: [ModelChoice; 6] = [
        ModelChoice::Detector(DetectorKind::IsolationForest),
        ModelChoice::Detector(DetectorKind::Lof),
        ModelChoice::Detector(DetectorKind::OneClassSvm),
        ModelChoice::Detector(DetectorKind::EllipticEnvelope),
        ModelChoice::Vae(ModelKind::CnnVae),
        ModelChoice::Vae(ModelKind::Scvae),
    ];
}

impl fmt::Display for ModelChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelChoice::Vae(k) => k.fmt(f),
            ModelChoice::Detector(d) => d.fmt(f),
        }
    }
}

impl FromStr for ModelChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        s.parse::<ModelKind>()
            .map(ModelChoice::Vae)
            .or_else(|_| s.parse::<DetectorKind>().map(ModelChoice::Detector))
            .map_err(|_| format!("unknown model `{s}` (CNN_VAE, SCVAE, IF, LOF, OCSVM, EE)"))
    }
}

impl Serialize for ModelChoice {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ModelChoice {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSettings {
    pub repetitions: usize,
    pub warmups: usize,
    pub latency_windows: usize,
}

impl Default for BenchSettings {
    fn default() -> Self {
        BenchSettings {
            repetitions: 30,
            warmups: 3,
            latency_windows: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// `occupancy`, `ozone`, a synthetic stand-in (`cnc_a` … `cnc_d`,
    /// `synthetic_occupancy`), or any name when `data_path` and `schema` are given.
    pub dataset: String,
    /// Overrides the default file location under the data directory.
    pub data_path: Option<PathBuf>,
    /// Overrides the built-in schema.
    pub schema: Option<PathBuf>,
    pub tw: usize,
    pub model: ModelChoice,
    pub train: TrainConfig,
    pub detectors: BaselineConfig,
    pub bench: BenchSettings,
    /// Fraction of windows flagged when scores are thresholded.
    pub ratio: f64,
    /// Propagated into the training, isolation-forest and elliptic-envelope seeds.
    pub seed: u64,
    /// Root under which `<config hash>/` directories are created; not hashed.
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: "occupancy".into(),
            data_path: None,
            schema: None,
            tw: 16,
            model: ModelChoice::Vae(ModelKind::Scvae),
            train: TrainConfig::default(),
            detectors: BaselineConfig::default(),
            bench: BenchSettings::default(),
            ratio: 0.05,
            seed: 0,
            out: PathBuf::from("runs"),
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// First 16 hex digits of the SHA-256 of canonical (key-sorted, compact) JSON.
pub fn content_hash<T: Serialize>(value: &T) -> String {
    let canonical = serde_json::to_value(value)
        .expect("configs serialize to JSON")
        .to_string();
    sha256_hex(canonical.as_bytes())[..16].to_string()
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .or_kind(ExitKind::Io, format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).or_kind(
            ExitKind::Usage,
            format!("parsing config {}", path.display()),
        )
    }

    /// Copies `seed` into every component seed.
    pub fn resolved(&self) -> RunConfig {
        let mut c = self.clone();
        c.train.seed = c.seed;
        c.detectors.iforest.seed = c.seed;
        c.detectors.elliptic.seed = c.seed;
        c.out = PathBuf::new();
        c
    }

    pub fn hash(&self) -> String {
        content_hash(&self.resolved())
    }

    pub fn run_dir(&self) -> PathBuf {
        self.out.join(self.hash())
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.tw == 0 {
            return Err(CliError::usage("tw must be positive"));
        }
        if !(self.ratio > 0.0 && self.ratio < 1.0) {
            return Err(CliError::usage(format!(
                "ratio {} must lie in (0, 1)",
                self.ratio
            )));
        }
        self.train.validate()?;
        Ok(())
    }
}

/// A cartesian grid of runs sharing one base configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub base: RunConfig,
    pub datasets: Vec<String>,
    pub tws: Vec<usize>,
    pub models: Vec<ModelChoice>,
}

impl GridConfig {
    pub fn cells(&self) -> Vec<RunConfig> {
        let mut out = Vec::new();
        for d in &self.datasets {
            for &tw in &self.tws {
                for &m in &self.models {
                    out.push(RunConfig {
                        dataset: d.clone(),
                        tw,
                        model: m,
                        ..self.base.clone()
                    });
                }
            }
        }
        out
    }
}

/// A config file holds either one run or a grid.
pub fn load_cells(path: &Path) -> CliResult<Vec<RunConfig>> {
    let text = std::fs::read_to_string(path)
        .or_kind(ExitKind::Io, format!("reading config {}", path.display()))?;
    let value: serde_json::Value = serde_json::from_str(&text).or_kind(
        ExitKind::Usage,
        format!("parsing config {}", path.display()),
    )?;
    if value.get("base").is_some() {
        let grid: GridConfig = serde_json::from_value(value)
            .or_kind(ExitKind::Usage, format!("grid config {}", path.display()))?;
        Ok(grid.cells())
    } else {
        Ok(vec![serde_json::from_value(value).or_kind(
            ExitKind::Usage,
            format!("run config {}", path.display()),
        )?])
    }
}
