//! Exit-code classification and the machine-readable error document.

use std::fmt;

use scvae_baselines::DetectorError;
use scvae_core::bench::BenchError;
use scvae_core::container::ContainerError;
use scvae_core::metrics::MetricError;
use scvae_core::{CheckpointError, DataError, TensorError, VaeError};
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitKind {
    Usage,
    Data,
    Numeric,
    Io,
}

impl ExitKind {
    pub fn code(self) -> i32 {
        match self {
            ExitKind::Usage => 2,
            ExitKind::Data => 3,
            ExitKind::Numeric => 4,
            ExitKind::Io => 5,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ExitKind,
    pub error: anyhow::Error,
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn new(kind: ExitKind, error: impl Into<anyhow::Error>) -> Self {
        CliError {
            kind,
            error: error.into(),
        }
    }

    pub fn usage(message: impl fmt::Display) -> Self {
        CliError::new(ExitKind::Usage, anyhow::anyhow!("{message}"))
    }

    pub fn data(message: impl fmt::Display) -> Self {
        CliError::new(ExitKind::Data, anyhow::anyhow!("{message}"))
    }

    pub fn context(self, context: impl fmt::Display + Send + Sync + 'static) -> Self {
        CliError {
            kind: self.kind,
            error: self.error.context(context),
        }
    }

    /// `{"error": {"kind", "exit_code", "message", "causes"}}`.
    pub fn document(&self) -> serde_json::Value {
        serde_json::json!({
            "error": {
                "kind": self.kind,
                "exit_code": self.kind.code(),
                "message": self.error.to_string(),
                "causes": self.error.chain().skip(1).map(|c| c.to_string()).collect::<Vec<_>>(),
            }
        })
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

pub trait ResultExt<T> {
    fn or_kind(
        self,
        kind: ExitKind,
        context: impl fmt::Display + Send + Sync + 'static,
    ) -> CliResult<T>;
}

impl<T, E: Into<anyhow::Error>> ResultExt<T> for Result<T, E> {
    fn or_kind(
        self,
        kind: ExitKind,
        context: impl fmt::Display + Send + Sync + 'static,
    ) -> CliResult<T> {
        self.map_err(|e| CliError::new(kind, e.into().context(context)))
    }
}

fn tensor_kind(e: &TensorError) -> ExitKind {
    match e {
        TensorError::NonFiniteGradient { .. } => ExitKind::Numeric,
        _ => ExitKind::Data,
    }
}

fn container_kind(e: &ContainerError) -> ExitKind {
    match e {
        ContainerError::Io(_) => ExitKind::Io,
        _ => ExitKind::Data,
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::new(ExitKind::Io, e)
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        let kind = match &e {
            DataError::Io { .. } => ExitKind::Io,
            DataError::Container(c) => container_kind(c),
            DataError::Invalid(_) => ExitKind::Usage,
            _ => ExitKind::Data,
        };
        CliError::new(kind, e)
    }
}

impl From<VaeError> for CliError {
    fn from(e: VaeError) -> Self {
        let kind = match &e {
            VaeError::NonFiniteLoss { .. }
            | VaeError::NegativeKl { .. }
            | VaeError::Step { .. } => ExitKind::Numeric,
            VaeError::Config(_) => ExitKind::Usage,
            VaeError::Tensor(t) => tensor_kind(t),
            _ => ExitKind::Data,
        };
        CliError::new(kind, e)
    }
}

impl From<DetectorError> for CliError {
    fn from(e: DetectorError) -> Self {
        let kind = match &e {
            DetectorError::NotConverged { .. }
            | DetectorError::SingularCovariance
            | DetectorError::NonFinite { .. } => ExitKind::Numeric,
            DetectorError::InvalidParameter { .. } => ExitKind::Usage,
            _ => ExitKind::Data,
        };
        CliError::new(kind, e)
    }
}

impl From<MetricError> for CliError {
    fn from(e: MetricError) -> Self {
        let kind = match &e {
            MetricError::NonFinite(_) => ExitKind::Numeric,
            MetricError::InvalidRatio(_) | MetricError::InvalidMajority { .. } => ExitKind::Usage,
            _ => ExitKind::Data,
        };
        CliError::new(kind, e)
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        let kind = match &e {
            CheckpointError::Container(c) => container_kind(c),
            _ => ExitKind::Data,
        };
        CliError::new(kind, e)
    }
}

impl From<BenchError> for CliError {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::Vae(v) => v.into(),
            BenchError::Metric(m) => m.into(),
            BenchError::TooFewRepetitions(_) => CliError::new(ExitKind::Usage, e),
            BenchError::Csv(_) => CliError::new(ExitKind::Io, e),
            BenchError::EmptyDataset => CliError::new(ExitKind::Data, e),
        }
    }
}
