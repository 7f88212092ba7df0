//! Reparameterized sampling, the ELBO objective, training, and the
//! reconstruction-probability anomaly score.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autograd::{Tape, Var};
use crate::model::{TapeBinding, VaeModel, LOG_VAR_MAX, LOG_VAR_MIN};
use crate::ops::NormMode;
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::tensor::{shape_err, Real, Tensor, TensorError};
use crate::zoo::ModelError;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VaeError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("dataset needs at least {needed} windows, got {found}")]
    TooFewWindows { needed: usize, found: usize },
    #[error("non-finite loss {value} at epoch {epoch}, batch {batch}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        value: f64,
    },
    #[error("negative KL divergence {value} at epoch {epoch}, batch {batch}")]
    NegativeKl {
        epoch: usize,
        batch: usize,
        value: f64,
    },
    #[error("epoch {epoch}, batch {batch}: {source}")]
    Step {
        epoch: usize,
        batch: usize,
        #[source]
        source: TensorError,
    },
}

/// Diagonal Gaussian given by per-dimension mean and log-variance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParams<T = f64> {
    pub mean: Tensor<T>,
    pub log_var: Tensor<T>,
}

impl<T: Real> GaussianParams<T> {
    /// Clamps `log_var` into `[-10, 10]`.
    pub fn new(mean: Tensor<T>, log_var: Tensor<T>) -> Result<Self, TensorError> {
        if mean.shape() != log_var.shape() {
            return Err(shape_err("gaussian_params", mean.shape(), log_var.shape()));
        }
        let (lo, hi) = (
            T::from_f64_lossy(LOG_VAR_MIN),
            T::from_f64_lossy(LOG_VAR_MAX),
        );
        let log_var = log_var.map(|v| v.max(lo).min(hi));
        Ok(GaussianParams { mean, log_var })
    }

    /// Splits `[batch, 2·half]` rows into mean (first half) and log-variance.
    pub(crate) fn split(out: &Tensor<T>, half: usize) -> Result<Self, TensorError> {
        let (batch, width) = out.dims2("gaussian_split")?;
        if width != 2 * half {
            return Err(shape_err("gaussian_split", [batch, 2 * half], out.shape()));
        }
        let mut mean = Vec::with_capacity(batch * half);
        let mut log_var = Vec::with_capacity(batch * half);
        for row in out.data().chunks_exact(width) {
            mean.extend_from_slice(&row[..half]);
            log_var.extend_from_slice(&row[half..]);
        }
        GaussianParams::new(
            Tensor::new([batch, half], mean)?,
            Tensor::new([batch, half], log_var)?,
        )
    }
}

/// `Σ −½ln2π − ½lv − (x−μ)²/(2e^lv)`.
pub fn gaussian_log_density<T: Real>(x: &[T], mean: &[T], log_var: &[T]) -> T {
    let half = T::from_f64_lossy(0.5);
    let c = T::from_f64_lossy(0.5 * LN_2PI);
    x.iter()
        .zip(mean)
        .zip(log_var)
        .map(|((&x, &m), &lv)| {
            let d = x - m;
            -c - half * lv - half * d * d * (-lv).exp()
        })
        .sum()
}

/// `Σ ½(μ² + e^lv − 1 − lv)`.
pub fn kl_std_normal<T: Real>(mean: &[T], log_var: &[T]) -> T {
    let half = T::from_f64_lossy(0.5);
    mean.iter()
        .zip(log_var)
        .map(|(&m, &lv)| half * (m * m + lv.exp() - T::one() - lv))
        .sum()
}

pub fn gaussian_log_likelihood<T: Real>(
    x: &Tensor<T>,
    p: &GaussianParams<T>,
) -> Result<T, TensorError> {
    if x.len() != p.mean.len() {
        return Err(shape_err(
            "gaussian_log_likelihood",
            p.mean.shape(),
            x.shape(),
        ));
    }
    Ok(gaussian_log_density(
        x.data(),
        p.mean.data(),
        p.log_var.data(),
    ))
}

pub fn kl_divergence<T: Real>(q: &GaussianParams<T>) -> T {
    kl_std_normal(q.mean.data(), q.log_var.data())
}

/// `z = μ + exp(½lv)·ε`.
pub fn reparameterize<T: Real>(
    q: &GaussianParams<T>,
    noise: &Tensor<T>,
) -> Result<Tensor<T>, TensorError> {
    if noise.shape() != q.mean.shape() {
        return Err(shape_err("reparameterize", q.mean.shape(), noise.shape()));
    }
    let half = T::from_f64_lossy(0.5);
    let data = q
        .mean
        .data()
        .iter()
        .zip(q.log_var.data())
        .zip(noise.data())
        .map(|((&m, &lv), &e)| m + (half * lv).exp() * e)
        .collect();
    Tensor::new(q.mean.shape(), data)
}

/// `ln((1/n)·Σ e^vᵢ)` without overflow.
pub fn log_mean_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + (sum / values.len() as f64).ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub latent_dim: usize,
    pub mc_samples_train: usize,
    pub mc_samples_score: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            learning_rate: 0.0002,
            epochs: 50,
            latent_dim: 100,
            mc_samples_train: 1,
            mc_samples_score: 16,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), VaeError> {
        let fail = |m: &str| Err(VaeError::Config(m.to_string()));
        if self.batch_size < 2 {
            return fail("batch_size must be at least 2 (batch normalization)");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be positive and finite");
        }
        if self.latent_dim == 0 {
            return fail("latent_dim must be positive");
        }
        if self.mc_samples_train == 0 || self.mc_samples_score == 0 {
            return fail("Monte-Carlo sample counts must be at least 1");
        }
        Ok(())
    }
}

/// Recorded ELBO for one batch: `loss = −mean(recon − kl)`.
pub struct ElboGraph {
    pub loss: Var,
    /// Per-sample reconstruction log-likelihood averaged over Monte-Carlo draws, `[batch]`.
    pub recon: Var,
    /// Per-sample KL divergence, `[batch]`.
    pub kl: Var,
    pub binding: TapeBinding,
}

/// Records the negated ELBO of `x` (`[batch, tw, #f]`) on `tape`, with one
/// reparameterized draw per entry of `noise` (each `[batch, Z]`).
pub fn elbo_graph(
    model: &VaeModel<f64>,
    tape: &mut Tape,
    x: &Tensor<f64>,
    noise: &[Tensor<f64>],
    mode: NormMode,
) -> Result<ElboGraph, VaeError> {
    if noise.is_empty() {
        return Err(VaeError::Config(
            "at least one noise draw is required".into(),
        ));
    }
    let mut binding = model.bind(tape);
    let (mean, log_var) = model.encode_on_tape(tape, &mut binding, x, mode)?;
    let kl = tape.kl_std_normal(mean, log_var)?;
    let target = {
        let batch = tape.value(mean).shape()[0];
        x.clone().reshape([batch, model.arch().window_len()])?
    };
    let mut recon: Option<Var> = None;
    for eps in noise {
        let z = tape.reparameterize(mean, log_var, eps)?;
        let (dm, dlv) = model.decode_on_tape(tape, &mut binding, z, mode)?;
        let ll = tape.gaussian_log_likelihood(&target, dm, dlv)?;
        recon = Some(match recon {
            None => ll,
            Some(acc) => tape.add(acc, ll)?,
        });
    }
    let recon = tape.scale(recon.expect("noise is non-empty"), 1.0 / noise.len() as f64);
    let elbo = tape.sub(recon, kl)?;
    let mean_elbo = tape.mean(elbo);
    let loss = tape.scale(mean_elbo, -1.0);
    Ok(ElboGraph {
        loss,
        recon,
        kl,
        binding,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElboTerms {
    pub loss: f64,
    pub recon: f64,
    pub kl: f64,
}

/// Batch-mean loss, reconstruction log-likelihood and KL without touching the model.
pub fn elbo(
    model: &VaeModel<f64>,
    x: &Tensor<f64>,
    noise: &[Tensor<f64>],
    mode: NormMode,
) -> Result<ElboTerms, VaeError> {
    let mut tape = Tape::new();
    let g = elbo_graph(model, &mut tape, x, noise, mode)?;
    let avg = |v: Var| {
        let t = tape.value(v);
        t.sum() / t.len() as f64
    };
    Ok(ElboTerms {
        loss: tape.value(g.loss).data()[0],
        recon: avg(g.recon),
        kl: avg(g.kl),
    })
}

fn standard_normal(rng: &mut impl Rng, shape: [usize; 2]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.sample(StandardNormal))
}

fn gather(windows: &Tensor<f64>, idx: &[usize]) -> Tensor<f64> {
    let per = windows.len() / windows.batch();
    let mut shape = windows.shape().to_vec();
    shape[0] = idx.len();
    let mut data = Vec::with_capacity(idx.len() * per);
    for &i in idx {
        data.extend_from_slice(&windows.data()[i * per..(i + 1) * per]);
    }
    Tensor::new(shape, data).expect("gathered rows match shape")
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean loss per epoch.
    pub loss_history: Vec<f64>,
    pub recon_history: Vec<f64>,
    pub kl_history: Vec<f64>,
    pub batches_per_epoch: usize,
}

/// Mini-batch Adam on the negated ELBO. Batches are reshuffled every epoch from
/// a stream seeded by `config.seed`; a trailing batch of one window is skipped.
pub fn train(
    model: &mut VaeModel<f64>,
    windows: &Tensor<f64>,
    config: &TrainConfig,
) -> Result<TrainReport, VaeError> {
    config.validate()?;
    let shape = windows.shape();
    let (tw, nf) = (model.arch().time_window, model.arch().num_features);
    if shape.len() != 3 || shape[1] != tw || shape[2] != nf {
        return Err(ModelError::InputShape {
            expected: vec![tw, nf],
            found: shape.to_vec(),
        }
        .into());
    }
    let n = shape[0];
    if n < 2 {
        return Err(VaeError::TooFewWindows {
            needed: 2,
            found: n,
        });
    }

    let adam = AdamConfig {
        learning_rate: config.learning_rate,
        ..AdamConfig::default()
    };
    let mut state = AdamState::new(
        adam,
        model
            .params()
            .iter()
            .map(|p| (p.name.as_str(), p.value.shape())),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let z = model.latent_dim();
    let mut order: Vec<usize> = (0..n).collect();
    let mut report = TrainReport::default();

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut recon_sum, mut kl_sum, mut count) = (0.0, 0.0, 0.0, 0usize);
        for (batch, idx) in order.chunks(config.batch_size).enumerate() {
            if idx.len() < 2 {
                continue;
            }
            let x = gather(windows, idx);
            let noise: Vec<_> = (0..config.mc_samples_train)
                .map(|_| standard_normal(&mut rng, [idx.len(), z]))
                .collect();
            let mut tape = Tape::new();
            let g = elbo_graph(model, &mut tape, &x, &noise, NormMode::Train)?;
            let loss = tape.value(g.loss).data()[0];
            if !loss.is_finite() {
                return Err(VaeError::NonFiniteLoss {
                    epoch,
                    batch,
                    value: loss,
                });
            }
            let kl = tape.value(g.kl);
            if let Some(&value) = kl.data().iter().find(|&&v| v < 0.0) {
                return Err(VaeError::NegativeKl {
                    epoch,
                    batch,
                    value,
                });
            }
            let kl_mean = kl.sum() / kl.len() as f64;
            let recon_mean = tape.value(g.recon).sum() / idx.len() as f64;

            let mut grads = tape.backward(g.loss)?;
            let grads: Vec<_> = g
                .binding
                .params
                .iter()
                .map(|&v| grads.take_or_zeros(v))
                .collect();
            let mut values: Vec<Tensor<f64>> = model
                .params_mut()
                .iter_mut()
                .map(|p| std::mem::replace(&mut p.value, Tensor::zeros(Vec::new())))
                .collect();
            let stepped = adam_step(&mut values, &grads, &mut state);
            for (p, v) in model.params_mut().iter_mut().zip(values) {
                p.value = v;
            }
            stepped.map_err(|source| VaeError::Step {
                epoch,
                batch,
                source,
            })?;
            model.apply_batch_stats(&g.binding.batch_stats);

            loss_sum += loss;
            recon_sum += recon_mean;
            kl_sum += kl_mean;
            count += 1;
        }
        let c = count as f64;
        report.loss_history.push(loss_sum / c);
        report.recon_history.push(recon_sum / c);
        report.kl_history.push(kl_sum / c);
        report.batches_per_epoch = count;
        log::info!(
            "epoch {}/{}: loss {:.6}",
            epoch + 1,
            config.epochs,
            loss_sum / c
        );
    }
    Ok(report)
}

/// Noise for window `index`: `count` draws of `[Z]` from a ChaCha stream keyed
/// by `(seed, index)`, independent of scoring order.
pub fn window_noise<T: Real>(seed: u64, index: u64, count: usize, latent_dim: usize) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    Tensor::from_fn([count, latent_dim], |_| {
        T::from_f64_lossy(rng.sample(StandardNormal))
    })
}

/// `−ln((1/L)·Σ p(x|z_l))` with `z_l = μ + σ·ε_l` for the rows `ε_l` of `noise`
/// (`[L, Z]`). Higher means more anomalous.
pub fn anomaly_score_with_noise<T: Real>(
    model: &VaeModel<T>,
    x: &Tensor<T>,
    noise: &Tensor<T>,
) -> Result<f64, VaeError> {
    let x = model.input_batch(x)?;
    if x.batch() != 1 {
        return Err(shape_err("anomaly_score", "a single window", x.shape()).into());
    }
    let q = model.encode(&x)?;
    Ok(scores_from_posterior(model, x.data(), &q, 0, noise)?)
}

fn scores_from_posterior<T: Real>(
    model: &VaeModel<T>,
    x: &[T],
    q: &GaussianParams<T>,
    row: usize,
    noise: &Tensor<T>,
) -> Result<f64, VaeError> {
    let zd = model.latent_dim();
    let (l, nz) = noise.dims2("anomaly_score")?;
    if nz != zd || l == 0 {
        return Err(shape_err("anomaly_score", format!("[L, {zd}]"), noise.shape()).into());
    }
    let m = &q.mean.data()[row * zd..(row + 1) * zd];
    let lv = &q.log_var.data()[row * zd..(row + 1) * zd];
    let half = T::from_f64_lossy(0.5);
    let mut z = Vec::with_capacity(l * zd);
    for eps in noise.data().chunks_exact(zd) {
        z.extend(
            m.iter()
                .zip(lv)
                .zip(eps)
                .map(|((&m, &lv), &e)| m + (half * lv).exp() * e),
        );
    }
    let p = model.decode(&Tensor::new([l, zd], z)?)?;
    let d = model.arch().window_len();
    let lls: Vec<f64> = (0..l)
        .map(|s| {
            let r = s * d..(s + 1) * d;
            gaussian_log_density(x, &p.mean.data()[r.clone()], &p.log_var.data()[r]).as_f64()
        })
        .collect();
    Ok(-log_mean_exp(&lls))
}

/// Score of window `index` with `samples` draws from its own seeded stream.
pub fn anomaly_score<T: Real>(
    model: &VaeModel<T>,
    x: &Tensor<T>,
    samples: usize,
    seed: u64,
    index: u64,
) -> Result<f64, VaeError> {
    let noise = window_noise(seed, index, samples, model.latent_dim());
    anomaly_score_with_noise(model, x, &noise)
}

/// Scores every window of `[N, tw, #f]`; window `i` uses stream `(seed, i)`, so
/// each entry equals `anomaly_score(model, windows[i], samples, seed, i)`.
pub fn score_windows<T: Real>(
    model: &VaeModel<T>,
    windows: &Tensor<T>,
    samples: usize,
    seed: u64,
) -> Result<Vec<f64>, VaeError> {
    const CHUNK: usize = 64;
    let x = model.input_batch(windows)?;
    let n = x.batch();
    let d = model.arch().window_len();
    let mut out = Vec::with_capacity(n);
    for start in (0..n).step_by(CHUNK) {
        let end = (start + CHUNK).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let chunk = Tensor::new(
            [
                end - start,
                model.arch().time_window,
                model.arch().num_features,
                1,
            ],
            x.data()[start * d..end * d].to_vec(),
        )?;
        let q = model.encode(&chunk)?;
        for (row, &i) in idx.iter().enumerate() {
            let noise = window_noise(seed, i as u64, samples, model.latent_dim());
            out.push(scores_from_posterior(
                model,
                &chunk.data()[row * d..(row + 1) * d],
                &q,
                row,
                &noise,
            )?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo::build_scvae;

    #[test]
    fn log_density_closed_forms() {
        let d = 5;
        let zeros = vec![0.0; d];
        let v = gaussian_log_density(&zeros, &zeros, &zeros);
        assert!((v + d as f64 / 2.0 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-12);
        let mut shifted = zeros.clone();
        shifted[2] = 1.0;
        let w = gaussian_log_density(&shifted, &zeros, &zeros);
        assert!((v - w - 0.5).abs() < 1e-12);
        // one standard deviation with log_var = 2
        let lv = vec![2.0; d];
        let mut x = zeros.clone();
        x[0] = 1.0f64.exp();
        assert!(
            (gaussian_log_density(&zeros, &zeros, &lv)
                - gaussian_log_density(&x, &zeros, &lv)
                - 0.5)
                .abs()
                < 1e-12
        );
    }

    #[test]
    fn kl_closed_forms() {
        assert_eq!(kl_std_normal(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
        assert!((kl_std_normal(&[1.0f64], &[0.0]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn reparameterize_identities() {
        let q = GaussianParams::new(Tensor::from_fn([1, 3], |i| i as f64), Tensor::zeros([1, 3]))
            .unwrap();
        assert_eq!(reparameterize(&q, &Tensor::zeros([1, 3])).unwrap(), q.mean);
        let n = Tensor::new([1, 3], vec![0.5, -1.0, 2.0]).unwrap();
        assert_eq!(reparameterize(&q, &n).unwrap().data(), &[0.5, 0.0, 4.0]);
    }

    #[test]
    fn reparameterized_variance_matches() {
        let lv = 0.7f64;
        let q = GaussianParams::new(Tensor::zeros([1, 100_000]), Tensor::full([1, 100_000], lv))
            .unwrap();
        let noise = window_noise::<f64>(3, 0, 1, 100_000);
        let z = reparameterize(&q, &noise).unwrap();
        let n = z.len() as f64;
        let mean = z.sum() / n;
        let var = z.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((var / lv.exp() - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn log_var_is_clamped() {
        let q = GaussianParams::new(
            Tensor::zeros([2]),
            Tensor::new([2], vec![-50.0, 50.0]).unwrap(),
        )
        .unwrap();
        assert_eq!(q.log_var.data(), &[-10.0, 10.0]);
    }

    #[test]
    fn log_mean_exp_is_stable() {
        assert!((log_mean_exp(&[-1000.0, -1000.0]) + 1000.0).abs() < 1e-12);
        assert!((log_mean_exp(&[0.0, 2f64.ln()]) - 1.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn elbo_decomposes_with_fixed_noise() {
        let model = build_scvae(4, 3, 2, 5).unwrap();
        let x = Tensor::from_fn([3, 4, 3], |i| ((i * 7) % 5) as f64 - 2.0);
        let noise = [Tensor::zeros([3, 2])];
        let terms = elbo(&model, &x, &noise, NormMode::Infer).unwrap();
        let mut recon = 0.0;
        let mut kl = 0.0;
        for b in 0..3 {
            let xb = Tensor::new([4, 3], x.data()[b * 12..(b + 1) * 12].to_vec()).unwrap();
            let q = model.encode(&xb).unwrap();
            let p = model.decode(&q.mean).unwrap();
            recon += gaussian_log_likelihood(&xb, &p).unwrap();
            kl += kl_divergence(&q);
        }
        assert!((terms.loss + (recon - kl) / 3.0).abs() < 1e-10);
        assert!((terms.kl - kl / 3.0).abs() < 1e-12);
    }

    #[test]
    fn single_fixed_sample_score_is_negative_log_likelihood() {
        let model = build_scvae(4, 3, 2, 5).unwrap();
        let x = Tensor::from_fn([4, 3], |i| (i as f64 * 0.3).sin());
        let s = anomaly_score_with_noise(&model, &x, &Tensor::zeros([1, 2])).unwrap();
        let q = model.encode(&x).unwrap();
        let p = model.decode(&q.mean).unwrap();
        assert!((s + gaussian_log_likelihood(&x, &p).unwrap()).abs() < 1e-10);
    }

    #[test]
    fn batched_scoring_matches_single_window_scoring() {
        let model = build_scvae(4, 3, 2, 5).unwrap();
        let w = Tensor::from_fn([70, 4, 3], |i| ((i * 31) % 17) as f64 / 8.0 - 1.0);
        let all = score_windows(&model, &w, 4, 11).unwrap();
        for i in [0usize, 63, 64, 69] {
            let xi = Tensor::new([4, 3], w.data()[i * 12..(i + 1) * 12].to_vec()).unwrap();
            assert_eq!(all[i], anomaly_score(&model, &xi, 4, 11, i as u64).unwrap());
        }
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let windows = Tensor::from_fn([32, 4, 3], |i| ((i % 12) as f64 * 0.4).cos());
        let config = TrainConfig {
            batch_size: 8,
            epochs: 6,
            latent_dim: 2,
            learning_rate: 0.005,
            seed: 1,
            ..TrainConfig::default()
        };
        let run = || {
            let mut model = build_scvae(4, 3, 2, 2).unwrap();
            let report = train(&mut model, &windows, &config).unwrap();
            (model, report)
        };
        let (a, ra) = run();
        let (b, rb) = run();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
        assert_eq!(ra.loss_history.len(), 6);
        assert!(ra.loss_history[5] < ra.loss_history[0]);
    }

    #[test]
    fn training_rejects_single_window() {
        let mut model = build_scvae(4, 3, 2, 2).unwrap();
        let err = train(
            &mut model,
            &Tensor::zeros([1, 4, 3]),
            &TrainConfig::default(),
        )
        .unwrap_err();
        assert_eq!(
            err,
            VaeError::TooFewWindows {
                needed: 2,
                found: 1
            }
        );
    }
}
