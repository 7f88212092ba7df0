//! Classical unsupervised detectors over flattened windows. Every detector
//! scores so that higher means more anomalous.

pub mod iforest;
pub mod lof;
pub mod mcd;
pub mod ocsvm;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use iforest::{IsolationForest, IsolationForestConfig};
pub use lof::{LocalOutlierFactor, LofConfig};
pub use mcd::{EllipticEnvelope, EllipticEnvelopeConfig};
pub use ocsvm::{OneClassSvm, OneClassSvmConfig};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DetectorError {
    #[error("dataset must have at least {needed} rows, got {found}")]
    TooFewRows { needed: usize, found: usize },
    #[error("dataset has zero columns")]
    NoColumns,
    #[error("{values} values do not fill rows of {cols} columns")]
    Ragged { values: usize, cols: usize },
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("invalid {name}: {message}")]
    InvalidParameter { name: &'static str, message: String },
    #[error("query has {found} columns, model was fitted on {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("one-class SVM did not converge in {iterations} iterations (KKT violation {violation:.3e} > tolerance {tolerance:.1e})")]
    NotConverged {
        iterations: usize,
        violation: f64,
        tolerance: f64,
    },
    #[error("covariance is singular after regularization")]
    SingularCovariance,
}

/// Row-major `rows × cols` matrix of finite values.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatDataset {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl FlatDataset {
    pub fn new(cols: usize, values: Vec<f64>) -> Result<Self, DetectorError> {
        if cols == 0 {
            return Err(DetectorError::NoColumns);
        }
        if values.len() % cols != 0 {
            return Err(DetectorError::Ragged {
                values: values.len(),
                cols,
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(DetectorError::NonFinite {
                row: i / cols,
                col: i % cols,
            });
        }
        let rows = values.len() / cols;
        if rows < 2 {
            return Err(DetectorError::TooFewRows {
                needed: 2,
                found: rows,
            });
        }
        Ok(FlatDataset { rows, cols, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, DetectorError> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(r) = rows.iter().find(|r| r.len() != cols) {
            return Err(DetectorError::Ragged {
                values: r.len(),
                cols,
            });
        }
        FlatDataset::new(cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.cols)
    }
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub(crate) fn check_dim(expected: usize, x: &[f64]) -> Result<(), DetectorError> {
    if x.len() != expected {
        return Err(DetectorError::Dimension {
            expected,
            found: x.len(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DetectorKind {
    #[serde(rename = "IF")]
    IsolationForest,
    #[serde(rename = "LOF")]
    Lof,
    #[serde(rename = "OCSVM")]
    OneClassSvm,
    #[serde(rename = "EE")]
    EllipticEnvelope,
}

impl DetectorKind {
    pub const ALL: [DetectorKind; 4] = [
        DetectorKind::IsolationForest,
        DetectorKind::Lof,
        DetectorKind::OneClassSvm,
        DetectorKind::EllipticEnvelope,
    ];
}

impl fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DetectorKind::IsolationForest => "IF",
            DetectorKind::Lof => "LOF",
            DetectorKind::OneClassSvm => "OCSVM",
            DetectorKind::EllipticEnvelope => "EE",
        })
    }
}

impl FromStr for DetectorKind {
    type Err = DetectorError;

    fn from_str(s: &str) -> Result<Self, DetectorError> {
        match s.to_ascii_uppercase().as_str() {
            "IF" | "IFOREST" | "ISOLATION_FOREST" => Ok(DetectorKind::IsolationForest),
            "LOF" => Ok(DetectorKind::Lof),
            "OCSVM" | "SVM" => Ok(DetectorKind::OneClassSvm),
            "EE" | "MCD" | "ELLIPTIC_ENVELOPE" => Ok(DetectorKind::EllipticEnvelope),
            _ => Err(DetectorError::InvalidParameter {
                name: "detector",
                message: format!("unknown detector `{s}` (IF, LOF, OCSVM, EE)"),
            }),
        }
    }
}

/// Hyperparameters for all four detectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub iforest: IsolationForestConfig,
    pub lof: LofConfig,
    pub ocsvm: OneClassSvmConfig,
    pub elliptic: EllipticEnvelopeConfig,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            iforest: IsolationForestConfig::default(),
            lof: LofConfig::default(),
            ocsvm: OneClassSvmConfig::default(),
            elliptic: EllipticEnvelopeConfig::default(),
        }
    }
}

/// Fits on `data` and scores the same rows (LOF excludes each row from its
/// own neighborhood).
pub fn fit_score(
    kind: DetectorKind,
    data: &FlatDataset,
    config: &BaselineConfig,
) -> Result<Vec<f64>, DetectorError> {
    match kind {
        DetectorKind::IsolationForest => {
            let m = IsolationForest::fit(data, &config.iforest)?;
            Ok(data.iter_rows().map(|r| m.score_unchecked(r)).collect())
        }
        DetectorKind::Lof => Ok(LocalOutlierFactor::fit(data, &config.lof)?.training_scores()),
        DetectorKind::OneClassSvm => OneClassSvm::fit(data, &config.ocsvm)?.score_all(data),
        DetectorKind::EllipticEnvelope => {
            EllipticEnvelope::fit(data, &config.elliptic)?.score_all(data)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_validation() {
        assert!(matches!(
            FlatDataset::new(0, vec![]),
            Err(DetectorError::NoColumns)
        ));
        assert!(matches!(
            FlatDataset::new(2, vec![1.0; 3]),
            Err(DetectorError::Ragged { .. })
        ));
        assert!(matches!(
            FlatDataset::new(2, vec![1.0, 2.0]),
            Err(DetectorError::TooFewRows { .. })
        ));
        assert!(matches!(
            FlatDataset::new(2, vec![1.0, 2.0, f64::NAN, 0.0]),
            Err(DetectorError::NonFinite { row: 1, col: 0 })
        ));
        let d = FlatDataset::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(d.row(1), &[3.0, 4.0]);
    }

    #[test]
    fn kind_names_round_trip() {
        for k in DetectorKind::ALL {
            assert_eq!(k.to_string().parse::<DetectorKind>().unwrap(), k);
        }
    }
}
