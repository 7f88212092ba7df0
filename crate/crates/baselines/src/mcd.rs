//! Elliptic Envelope: minimum-covariance-determinant location and scatter via
//! concentration steps, scored by Mahalanobis distance.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{check_dim, DetectorError, FlatDataset};

pub const RIDGE_SCALE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EllipticEnvelopeConfig {
    pub support_fraction: f64,
    pub n_restarts: usize,
    pub max_csteps: usize,
    pub seed: u64,
}

impl Default for EllipticEnvelopeConfig {
    fn default() -> Self {
        EllipticEnvelopeConfig {
            support_fraction: 0.9,
            n_restarts: 10,
            max_csteps: 30,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EllipticEnvelope {
    location: DVector<f64>,
    /// Lower Cholesky factor of the regularized robust covariance.
    chol_l: DMatrix<f64>,
    log_det: f64,
    support: Vec<usize>,
    trajectories: Vec<Vec<f64>>,
}

struct Fit {
    mean: DVector<f64>,
    chol_l: DMatrix<f64>,
    log_det: f64,
}

fn subset_fit(x: &DMatrix<f64>, subset: &[usize], ridge: f64) -> Result<Fit, DetectorError> {
    let d = x.ncols();
    let h = subset.len() as f64;
    let rows = x.select_rows(subset);
    let mean = rows.row_mean().transpose();
    let centered = DMatrix::from_fn(rows.nrows(), d, |r, c| rows[(r, c)] - mean[c]);
    let mut cov = centered.transpose() * &centered / h;
    for i in 0..d {
        cov[(i, i)] += ridge;
    }
    let chol = cov.cholesky().ok_or(DetectorError::SingularCovariance)?;
    let chol_l = chol.l();
    let log_det = 2.0 * chol_l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
    if !log_det.is_finite() {
        return Err(DetectorError::SingularCovariance);
    }
    Ok(Fit {
        mean,
        chol_l,
        log_det,
    })
}

/// Squared Mahalanobis distance of every row.
fn mahalanobis_sq(x: &DMatrix<f64>, mean: &DVector<f64>, chol_l: &DMatrix<f64>) -> Vec<f64> {
    let centered_t = DMatrix::from_fn(x.ncols(), x.nrows(), |c, r| x[(r, c)] - mean[c]);
    let z = chol_l
        .solve_lower_triangular(&centered_t)
        .expect("Cholesky factor has a positive diagonal");
    z.column_iter().map(|col| col.norm_squared()).collect()
}

fn smallest(d2: &[f64], h: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..d2.len()).collect();
    idx.sort_by(|&a, &b| d2[a].total_cmp(&d2[b]).then(a.cmp(&b)));
    idx.truncate(h);
    idx.sort_unstable();
    idx
}

impl EllipticEnvelope {
    /// The ridge `1e-6·tr(Σ̂)/D` uses the full-data covariance trace so it stays
    /// fixed across concentration steps.
    pub fn fit(data: &FlatDataset, config: &EllipticEnvelopeConfig) -> Result<Self, DetectorError> {
        let (n, d) = (data.rows(), data.cols());
        if n <= d {
            return Err(DetectorError::TooFewRows {
                needed: d + 1,
                found: n,
            });
        }
        if !(config.support_fraction > 0.0 && config.support_fraction <= 1.0) {
            return Err(DetectorError::InvalidParameter {
                name: "support_fraction",
                message: format!("{} is outside (0, 1]", config.support_fraction),
            });
        }
        if config.n_restarts == 0 {
            return Err(DetectorError::InvalidParameter {
                name: "n_restarts",
                message: "must be positive".into(),
            });
        }
        let h = ((config.support_fraction * n as f64).ceil() as usize).clamp(d + 1, n);
        let x = DMatrix::from_row_slice(n, d, data.values());
        let means = x.row_mean();
        let trace: f64 = (0..d)
            .map(|c| {
                x.column(c)
                    .iter()
                    .map(|v| (v - means[c]).powi(2))
                    .sum::<f64>()
                    / n as f64
            })
            .sum();
        let ridge = RIDGE_SCALE * trace / d as f64;

        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut best: Option<(Fit, Vec<usize>)> = None;
        let mut trajectories = Vec::with_capacity(config.n_restarts);
        for _ in 0..config.n_restarts {
            let mut subset = rand::seq::index::sample(&mut rng, n, h).into_vec();
            subset.sort_unstable();
            let mut fit = subset_fit(&x, &subset, ridge)?;
            let mut trajectory = vec![fit.log_det];
            for _ in 0..config.max_csteps {
                let next = smallest(&mahalanobis_sq(&x, &fit.mean, &fit.chol_l), h);
                if next == subset {
                    break;
                }
                let next_fit = subset_fit(&x, &next, ridge)?;
                trajectory.push(next_fit.log_det);
                let stalled = next_fit.log_det >= fit.log_det - 1e-12 * fit.log_det.abs().max(1.0);
                subset = next;
                fit = next_fit;
                if stalled {
                    break;
                }
            }
            trajectories.push(trajectory);
            if best.as_ref().is_none_or(|(b, _)| fit.log_det < b.log_det) {
                best = Some((fit, subset));
            }
        }
        let (fit, support) = best.expect("at least one restart");
        Ok(EllipticEnvelope {
            location: fit.mean,
            chol_l: fit.chol_l,
            log_det: fit.log_det,
            support,
            trajectories,
        })
    }

    pub fn location(&self) -> &[f64] {
        self.location.as_slice()
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    /// Regularized log-determinant after the initial fit and each concentration step, per restart.
    pub fn trajectories(&self) -> &[Vec<f64>] {
        &self.trajectories
    }

    pub fn score(&self, x: &[f64]) -> Result<f64, DetectorError> {
        check_dim(self.location.len(), x)?;
        let m = DMatrix::from_row_slice(1, x.len(), x);
        Ok(mahalanobis_sq(&m, &self.location, &self.chol_l)[0].sqrt())
    }

    pub fn score_all(&self, data: &FlatDataset) -> Result<Vec<f64>, DetectorError> {
        check_dim(self.location.len(), data.row(0))?;
        let x = DMatrix::from_row_slice(data.rows(), data.cols(), data.values());
        Ok(mahalanobis_sq(&x, &self.location, &self.chol_l)
            .into_iter()
            .map(f64::sqrt)
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lattice(n: usize) -> FlatDataset {
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let a = ((i * 37) % 97) as f64 / 97.0 - 0.5;
                let b = ((i * 53) % 89) as f64 / 89.0 - 0.5;
                vec![a, b + 0.3 * a]
            })
            .collect();
        FlatDataset::from_rows(&rows).unwrap()
    }

    #[test]
    fn log_det_never_increases() {
        let m = EllipticEnvelope::fit(&lattice(300), &EllipticEnvelopeConfig::default()).unwrap();
        for t in m.trajectories() {
            for w in t.windows(2) {
                assert!(w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0), "{t:?}");
            }
        }
    }

    #[test]
    fn outlier_far_in_mahalanobis_terms() {
        let data = lattice(300);
        let m = EllipticEnvelope::fit(&data, &EllipticEnvelopeConfig::default()).unwrap();
        assert!(m.score(&[3.0, -3.0]).unwrap() > 5.0 * m.score(&[0.0, 0.0]).unwrap().max(0.1));
        let all = m.score_all(&data).unwrap();
        assert!((all[7] - m.score(data.row(7)).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn needs_more_rows_than_columns() {
        let data = FlatDataset::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert!(matches!(
            EllipticEnvelope::fit(&data, &Default::default()),
            Err(DetectorError::TooFewRows { .. })
        ));
    }

    #[test]
    fn identical_rows_are_singular() {
        let data = FlatDataset::from_rows(&vec![vec![1.0, 1.0]; 10]).unwrap();
        assert!(matches!(
            EllipticEnvelope::fit(&data, &Default::default()),
            Err(DetectorError::SingularCovariance)
        ));
    }
}
