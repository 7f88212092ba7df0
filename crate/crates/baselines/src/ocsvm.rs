//! One-class SVM with an RBF kernel, solved by SMO on the dual
//! `min ½αᵀKα  s.t.  Σα = 1, 0 ≤ αᵢ ≤ 1/(νN)`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::{check_dim, squared_distance, DetectorError, FlatDataset};

const TAU: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OneClassSvmConfig {
    pub nu: f64,
    /// RBF width; `None` means `1 / D`.
    pub gamma: Option<f64>,
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Kernel rows kept in memory during optimization.
    pub cache_rows: usize,
}

impl Default for OneClassSvmConfig {
    fn default() -> Self {
        OneClassSvmConfig {
            nu: 0.05,
            gamma: None,
            tolerance: 1e-3,
            max_iterations: 1_000_000,
            cache_rows: 512,
        }
    }
}

struct KernelCache<'a> {
    data: &'a FlatDataset,
    gamma: f64,
    rows: HashMap<usize, Vec<f64>>,
    order: Vec<usize>,
    capacity: usize,
}

impl<'a> KernelCache<'a> {
    fn row(&mut self, i: usize) -> &[f64] {
        if !self.rows.contains_key(&i) {
            if self.rows.len() >= self.capacity {
                let evict = self.order.remove(0);
                self.rows.remove(&evict);
            }
            let xi = self.data.row(i);
            let row = self
                .data
                .iter_rows()
                .map(|xj| (-self.gamma * squared_distance(xi, xj)).exp())
                .collect();
            self.rows.insert(i, row);
            self.order.push(i);
        }
        &self.rows[&i]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OneClassSvm {
    support: Vec<Vec<f64>>,
    alpha: Vec<f64>,
    rho: f64,
    gamma: f64,
    iterations: usize,
    kkt_violation: f64,
    upper_bound: f64,
}

impl OneClassSvm {
    pub fn fit(data: &FlatDataset, config: &OneClassSvmConfig) -> Result<Self, DetectorError> {
        let n = data.rows();
        if !(config.nu > 0.0 && config.nu <= 1.0) {
            return Err(DetectorError::InvalidParameter {
                name: "nu",
                message: format!("{} is outside (0, 1]", config.nu),
            });
        }
        let gamma = config.gamma.unwrap_or(1.0 / data.cols() as f64);
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(DetectorError::InvalidParameter {
                name: "gamma",
                message: format!("{gamma} is not positive"),
            });
        }
        let c = 1.0 / (config.nu * n as f64);

        // Feasible start: fill the first ⌊νN⌋ coefficients to the bound, the remainder into the next.
        let mut alpha = vec![0.0; n];
        let full = ((config.nu * n as f64).floor() as usize).min(n);
        alpha.iter_mut().take(full).for_each(|a| *a = c);
        if full < n {
            alpha[full] = (1.0 - full as f64 * c).max(0.0);
        }
        let mut cache = KernelCache {
            data,
            gamma,
            rows: HashMap::new(),
            order: Vec::new(),
            capacity: config.cache_rows.max(2),
        };
        let mut grad = vec![0.0; n];
        for (i, &a) in alpha.iter().enumerate() {
            if a > 0.0 {
                let row = cache.row(i).to_vec();
                grad.iter_mut().zip(&row).for_each(|(g, k)| *g += a * k);
            }
        }

        let at_upper = |a: f64| a >= c * (1.0 - 1e-12);
        let mut iterations = 0;
        let violation = loop {
            // i: most violating index that can grow; j: second-order partner that can shrink.
            let (mut i, mut gmax) = (usize::MAX, f64::NEG_INFINITY);
            let mut gmin = f64::INFINITY;
            for t in 0..n {
                if !at_upper(alpha[t]) && -grad[t] > gmax {
                    gmax = -grad[t];
                    i = t;
                }
                if alpha[t] > 0.0 && -grad[t] < gmin {
                    gmin = -grad[t];
                }
            }
            let violation = gmax - gmin;
            if i == usize::MAX || violation < config.tolerance {
                break violation.max(0.0);
            }
            if iterations >= config.max_iterations {
                return Err(DetectorError::NotConverged {
                    iterations,
                    violation,
                    tolerance: config.tolerance,
                });
            }
            let ki = cache.row(i).to_vec();
            let (mut j, mut best) = (usize::MAX, f64::INFINITY);
            for t in 0..n {
                if alpha[t] > 0.0 && -grad[t] < gmax {
                    let b = gmax + grad[t];
                    let a = (ki[i] + 1.0 - 2.0 * ki[t]).max(TAU);
                    let obj = -b * b / a;
                    if obj < best {
                        best = obj;
                        j = t;
                    }
                }
            }
            if j == usize::MAX {
                break violation;
            }
            let kj = cache.row(j).to_vec();
            let curvature = (ki[i] + kj[j] - 2.0 * ki[j]).max(TAU);
            let delta = ((grad[j] - grad[i]) / curvature)
                .min(c - alpha[i])
                .min(alpha[j])
                .max(0.0);
            alpha[i] += delta;
            alpha[j] -= delta;
            if alpha[j] < 1e-15 * c {
                alpha[j] = 0.0;
            }
            for t in 0..n {
                grad[t] += delta * (ki[t] - kj[t]);
            }
            iterations += 1;
        };

        let free: Vec<f64> = (0..n)
            .filter(|&t| alpha[t] > 0.0 && !at_upper(alpha[t]))
            .map(|t| grad[t])
            .collect();
        let rho = if free.is_empty() {
            let ub = (0..n)
                .filter(|&t| !at_upper(alpha[t]))
                .map(|t| grad[t])
                .fold(f64::INFINITY, f64::min);
            let lb = (0..n)
                .filter(|&t| alpha[t] > 0.0)
                .map(|t| grad[t])
                .fold(f64::NEG_INFINITY, f64::max);
            match (ub.is_finite(), lb.is_finite()) {
                (true, true) => 0.5 * (ub + lb),
                (true, false) => ub,
                _ => lb,
            }
        } else {
            free.iter().sum::<f64>() / free.len() as f64
        };
        let (support, alpha): (Vec<Vec<f64>>, Vec<f64>) = (0..n)
            .filter(|&t| alpha[t] > 0.0)
            .map(|t| (data.row(t).to_vec(), alpha[t]))
            .unzip();
        Ok(OneClassSvm {
            support,
            alpha,
            rho,
            gamma,
            iterations,
            kkt_violation: violation,
            upper_bound: c,
        })
    }

    /// `ρ − Σ αᵢ K(xᵢ, x)`; positive outside the learned support.
    pub fn score(&self, x: &[f64]) -> Result<f64, DetectorError> {
        check_dim(self.support[0].len(), x)?;
        let s: f64 = self
            .support
            .iter()
            .zip(&self.alpha)
            .map(|(sv, a)| a * (-self.gamma * squared_distance(sv, x)).exp())
            .sum();
        Ok(self.rho - s)
    }

    pub fn score_all(&self, data: &FlatDataset) -> Result<Vec<f64>, DetectorError> {
        data.iter_rows().map(|r| self.score(r)).collect()
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn upper_bound(&self) -> f64 {
        self.upper_bound
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn kkt_violation(&self) -> f64 {
        self.kkt_violation
    }
}
