//! Xavier initialization and the Adam update rule.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::{shape_err, Result, Tensor, TensorError};

/// `(fan_in, fan_out)` for a dense `[n, m]` weight or a `[k, k, a, b]` kernel.
pub fn fans(shape: &[usize]) -> Result<(usize, usize)> {
    match *shape {
        [n, m] => Ok((n, m)),
        [kh, kw, a, b] => Ok((kh * kw * a, kh * kw * b)),
        _ => Err(TensorError::Invalid(format!(
            "xavier_init needs a [n, m] or [k, k, cin, cout] shape, got {shape:?}"
        ))),
    }
}

pub fn xavier_bound(shape: &[usize]) -> Result<f64> {
    let (fan_in, fan_out) = fans(shape)?;
    Ok((6.0 / (fan_in + fan_out) as f64).sqrt())
}

/// Glorot-uniform draw in `[-√(6/(fan_in+fan_out)), +√(6/(fan_in+fan_out))]`.
pub fn xavier_init_with(shape: &[usize], rng: &mut impl Rng) -> Result<Tensor<f64>> {
    let bound = xavier_bound(shape)?;
    Ok(Tensor::from_fn(shape.to_vec(), |_| {
        rng.random_range(-bound..=bound)
    }))
}

pub fn xavier_init(shape: &[usize], seed: u64) -> Result<Tensor<f64>> {
    xavier_init_with(shape, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 0.0002,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step_count: u64,
    pub first_moment: Vec<Tensor<f64>>,
    pub second_moment: Vec<Tensor<f64>>,
    block_names: Vec<String>,
}

impl AdamState {
    /// Zeroed moments for named parameter blocks of the given shapes.
    pub fn new<'a>(
        config: AdamConfig,
        blocks: impl IntoIterator<Item = (&'a str, &'a [usize])>,
    ) -> Self {
        let mut names = Vec::new();
        let mut first = Vec::new();
        for (name, shape) in blocks {
            names.push(name.to_string());
            first.push(Tensor::zeros(shape));
        }
        AdamState {
            config,
            step_count: 0,
            second_moment: first.clone(),
            first_moment: first,
            block_names: names,
        }
    }
}

/// One bias-corrected Adam update. Gradients are validated before any parameter
/// or moment changes, so a rejected step leaves everything untouched.
pub fn adam_step(
    params: &mut [Tensor<f64>],
    grads: &[Tensor<f64>],
    state: &mut AdamState,
) -> Result<()> {
    if params.len() != state.first_moment.len() || grads.len() != params.len() {
        return Err(shape_err(
            "adam_step",
            format!("{} parameter blocks", state.first_moment.len()),
            format!("{} params / {} grads", params.len(), grads.len()),
        ));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.first_moment[i].shape() {
            return Err(shape_err("adam_step", p.shape(), g.shape()));
        }
        if let Some(index) = g.data().iter().position(|v| !v.is_finite()) {
            return Err(TensorError::NonFiniteGradient {
                block: state.block_names[i].clone(),
                index,
            });
        }
    }

    state.step_count += 1;
    let AdamConfig {
        learning_rate: lr,
        beta1: b1,
        beta2: b2,
        epsilon: eps,
    } = state.config;
    let t = state.step_count as i32;
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(
        state
            .first_moment
            .iter_mut()
            .zip(state.second_moment.iter_mut()),
    ) {
        for (((pi, &gi), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut().iter_mut())
            .zip(v.data_mut().iter_mut())
        {
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *pi -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
