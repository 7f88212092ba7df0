//! Finite-difference verification of the tape: every primitive and the full
//! ELBO of both architectures, judged against Richardson-extrapolated central
//! differences.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autograd::{Tape, Var};
use crate::ops::{ConvSpec, NormMode, Padding};
use crate::tensor::{Result as TensorResult, Tensor};
use crate::vae::{elbo_graph, VaeError};
use crate::zoo::{build, ModelKind};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Denominator floor: gradients smaller than this are judged on absolute error.
pub const FLOOR: f64 = 1e-3;
/// Largest tolerated fraction of probes whose perturbation crosses a kink.
pub const MAX_SKIP_FRACTION: f64 = 0.25;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GradReport {
    pub checked: usize,
    pub skipped: usize,
    pub worst: f64,
}

impl GradReport {
    pub fn merge(&mut self, other: GradReport) {
        self.checked += other.checked;
        self.skipped += other.skipped;
        self.worst = self.worst.max(other.worst);
    }

    pub fn passed(&self) -> bool {
        self.checked > 0
            && self.worst < TOLERANCE
            && (self.skipped as f64) <= MAX_SKIP_FRACTION * (self.checked + self.skipped) as f64
    }
}

impl fmt::Display for GradReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} coordinates, {} skipped at kinks, worst relative error {:.2e}",
            self.checked, self.skipped, self.worst
        )
    }
}

/// Rebuilds the graph from `inputs`; returns the tape, the scalar loss and the
/// variables whose gradients correspond to `inputs`.
pub type Graph<'a> = dyn Fn(&[Tensor<f64>]) -> Result<(Tape, Var, Vec<Var>), VaeError> + 'a;

fn eval(graph: &Graph, inputs: &[Tensor<f64>]) -> Result<(f64, u64), VaeError> {
    let (tape, loss, _) = graph(inputs)?;
    Ok((tape.value(loss).data()[0], tape.kink_signature()))
}

/// Which coordinates of the inputs are perturbed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Probe {
    All,
    /// This many random coordinates of every input.
    PerInput(usize),
    /// This many random (input, coordinate) pairs overall.
    Total(usize),
}

/// Compares analytic gradients with finite differences on the probed coordinates.
pub fn check(
    graph: &Graph,
    inputs: &[Tensor<f64>],
    probe_set: Probe,
    rng: &mut impl Rng,
) -> Result<GradReport, VaeError> {
    let (tape, loss, vars) = graph(inputs)?;
    let signature = tape.kink_signature();
    let mut grads = tape.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|&v| grads.take_or_zeros(v)).collect();
    let mut report = GradReport::default();
    let mut probe = inputs.to_vec();
    let coords: Vec<(usize, usize)> = match probe_set {
        Probe::All => inputs
            .iter()
            .enumerate()
            .flat_map(|(i, t)| (0..t.len()).map(move |j| (i, j)))
            .collect(),
        Probe::PerInput(k) => inputs
            .iter()
            .enumerate()
            .flat_map(|(i, t)| (0..k.min(t.len())).map(move |_| i))
            .map(|i| (i, rng.random_range(0..inputs[i].len())))
            .collect(),
        Probe::Total(n) => (0..n)
            .map(|_| {
                let i = rng.random_range(0..inputs.len());
                (i, rng.random_range(0..inputs[i].len()))
            })
            .collect(),
    };
    for (i, j) in coords {
        let base = inputs[i].data()[j];
        let mut central = |h: f64| -> Result<Option<f64>, VaeError> {
            probe[i].data_mut()[j] = base + h;
            let (up, sig_up) = eval(graph, &probe)?;
            probe[i].data_mut()[j] = base - h;
            let (down, sig_down) = eval(graph, &probe)?;
            probe[i].data_mut()[j] = base;
            Ok((sig_up == signature && sig_down == signature).then(|| (up - down) / (2.0 * h)))
        };
        let (Some(coarse), Some(fine)) = (central(STEP)?, central(STEP / 2.0)?) else {
            report.skipped += 1;
            continue;
        };
        let numeric = (4.0 * fine - coarse) / 3.0;
        let a = analytic[i].data()[j];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR);
        report.checked += 1;
        report.worst = report.worst.max(rel);
    }
    Ok(report)
}

fn normal(rng: &mut impl Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.sample(StandardNormal))
}

fn uniform(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(lo..hi))
}

/// Reduces a primitive's output to a scalar through a fixed random projection.
fn projected<'a>(
    projection_seed: u64,
    graph: impl Fn(&mut Tape, &[Var]) -> TensorResult<Var> + 'a,
) -> impl Fn(&[Tensor<f64>]) -> Result<(Tape, Var, Vec<Var>), VaeError> + 'a {
    move |inputs| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let y = graph(&mut tape, &vars)?;
        let n = tape.value(y).len();
        let flat = tape.reshape(y, &[1, n])?;
        let mut rng = ChaCha8Rng::seed_from_u64(projection_seed);
        let w = tape.leaf(uniform(&mut rng, &[n, 1], -1.0, 1.0));
        let b = tape.leaf(Tensor::zeros([1]));
        let loss = tape.dense(flat, w, b)?;
        Ok((tape, loss, vars))
    }
}

fn padding(rng: &mut impl Rng) -> Padding {
    if rng.random_bool(0.5) {
        Padding::Same
    } else {
        Padding::Valid
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Case {
    Conv2d,
    TransposeConv2d,
    Dense,
    ReluClamp,
    BatchNorm,
    ShapePlumbing,
    Arithmetic,
    ProbabilisticHead,
    Elbo(ModelKind, NormMode),
}

impl Case {
    pub const ALL: [Case; 12] = [
        Case::Conv2d,
        Case::TransposeConv2d,
        Case::Dense,
        Case::ReluClamp,
        Case::BatchNorm,
        Case::ShapePlumbing,
        Case::Arithmetic,
        Case::ProbabilisticHead,
        Case::Elbo(ModelKind::Scvae, NormMode::Train),
        Case::Elbo(ModelKind::Scvae, NormMode::Infer),
        Case::Elbo(ModelKind::CnnVae, NormMode::Train),
        Case::Elbo(ModelKind::CnnVae, NormMode::Infer),
    ];

    /// One seed of the case; primitives are probed on every coordinate, the
    /// ELBO (tw 4, 3 features, latent 2, batch 3) on a random sample.
    pub fn run_seed(self, seed: u64) -> Result<GradReport, VaeError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rng = &mut rng;
        match self {
            Case::Conv2d => {
                let (b, h, w, cin, cout) = (
                    rng.random_range(1..=2),
                    rng.random_range(3..=5),
                    rng.random_range(3..=5),
                    rng.random_range(1..=3),
                    rng.random_range(1..=3),
                );
                let spec = ConvSpec::new(cout, rng.random_range(1..=3), padding(rng), false);
                let inputs = vec![
                    normal(rng, &[b, h, w, cin]),
                    normal(rng, &spec.kernel_shape(cin)),
                    normal(rng, &[cout]),
                ];
                check(
                    &projected(seed, move |t, v| t.conv2d(v[0], &spec, v[1], v[2])),
                    &inputs,
                    Probe::All,
                    rng,
                )
            }
            Case::TransposeConv2d => {
                let (b, h, w, cin, cout) = (
                    rng.random_range(1..=2),
                    rng.random_range(1..=4),
                    rng.random_range(1..=4),
                    rng.random_range(1..=3),
                    rng.random_range(1..=3),
                );
                let spec = ConvSpec::new(cout, rng.random_range(1..=3), padding(rng), true);
                let inputs = vec![
                    normal(rng, &[b, h, w, cin]),
                    normal(rng, &spec.kernel_shape(cin)),
                    normal(rng, &[cout]),
                ];
                check(
                    &projected(seed, move |t, v| {
                        t.transpose_conv2d(v[0], &spec, v[1], v[2])
                    }),
                    &inputs,
                    Probe::All,
                    rng,
                )
            }
            Case::Dense => {
                let (b, n, m) = (
                    rng.random_range(1..=3),
                    rng.random_range(1..=6),
                    rng.random_range(1..=4),
                );
                let inputs = vec![
                    normal(rng, &[b, n]),
                    normal(rng, &[n, m]),
                    normal(rng, &[m]),
                ];
                check(
                    &projected(seed, |t, v| t.dense(v[0], v[1], v[2])),
                    &inputs,
                    Probe::All,
                    rng,
                )
            }
            Case::ReluClamp => {
                let inputs = vec![normal(rng, &[3, 5])];
                let f = projected(seed, |t, v| {
                    let r = t.relu(v[0]);
                    let c = t.clamp(v[0], -0.5, 0.7);
                    t.add(r, c)
                });
                check(&f, &inputs, Probe::All, rng)
            }
            Case::BatchNorm => {
                let (b, h, c) = (
                    rng.random_range(2..=3),
                    rng.random_range(1..=3),
                    rng.random_range(1..=3),
                );
                let mean: Vec<f64> = (0..c).map(|_| rng.random_range(-1.0..1.0)).collect();
                let var: Vec<f64> = (0..c).map(|_| rng.random_range(0.2..2.0)).collect();
                let inputs = vec![
                    normal(rng, &[b, h, 2, c]),
                    uniform(rng, &[c], 0.5, 1.5),
                    normal(rng, &[c]),
                ];
                let f = projected(seed, move |t, v| {
                    let (train, _) = t.batchnorm_train(v[0], v[1], v[2], 1e-5)?;
                    let infer = t.batchnorm_infer(v[0], v[1], v[2], &mean, &var, 1e-5)?;
                    t.add(train, infer)
                });
                check(&f, &inputs, Probe::All, rng)
            }
            Case::ShapePlumbing => {
                let (b, h, ca, cb) = (
                    rng.random_range(1..=3),
                    rng.random_range(1..=3),
                    rng.random_range(1..=3),
                    rng.random_range(1..=3),
                );
                let width = h * (ca + cb);
                let start = rng.random_range(0..width);
                let len = rng.random_range(1..=width - start);
                let inputs = vec![normal(rng, &[b, h, 1, ca]), normal(rng, &[b, h, 1, cb])];
                let f = projected(seed, move |t, v| {
                    let cat = t.concat_channels(v[0], v[1])?;
                    let flat = t.reshape(cat, &[b, width])?;
                    let s = t.slice_columns(flat, start, len)?;
                    Ok(t.scale(s, 1.7))
                });
                check(&f, &inputs, Probe::All, rng)
            }
            Case::Arithmetic => {
                let shape = [rng.random_range(1..=3), rng.random_range(1..=4)];
                let inputs = vec![normal(rng, &shape), normal(rng, &shape)];
                let f = projected(seed, |t, v| {
                    let s = t.add(v[0], v[1])?;
                    let d = t.sub(s, v[1])?;
                    let d = t.sub(d, v[1])?;
                    let m = t.mean(d);
                    let m2 = t.mean(v[0]);
                    t.sub(m, m2)
                });
                check(&f, &inputs, Probe::All, rng)
            }
            Case::ProbabilisticHead => {
                let (b, z, d) = (
                    rng.random_range(1..=3),
                    rng.random_range(1..=3),
                    rng.random_range(1..=5),
                );
                let noise = normal(rng, &[b, z]);
                let target = normal(rng, &[b, d]);
                let inputs = vec![
                    normal(rng, &[b, z]),
                    uniform(rng, &[b, z], -2.0, 2.0),
                    normal(rng, &[b, d]),
                    uniform(rng, &[b, d], -2.0, 2.0),
                ];
                let f = projected(seed, move |t, v| {
                    let zs = t.reparameterize(v[0], v[1], &noise)?;
                    let kl = t.kl_std_normal(v[0], v[1])?;
                    let ll = t.gaussian_log_likelihood(&target, v[2], v[3])?;
                    let zmean = t.mean(zs);
                    let zmean = t.reshape(zmean, &[1])?;
                    let both = t.sub(ll, kl)?;
                    let both = t.mean(both);
                    let both = t.reshape(both, &[1])?;
                    t.add(both, zmean)
                });
                check(&f, &inputs, Probe::All, rng)
            }
            Case::Elbo(kind, mode) => {
                let (tw, nf, zd, batch) = (4, 3, 2, 3);
                let probe = match kind {
                    ModelKind::Scvae => Probe::PerInput(3),
                    ModelKind::CnnVae => Probe::Total(16),
                };
                let model = build(kind, tw, nf, zd, seed)?;
                let x = normal(rng, &[batch, tw, nf]);
                let noise = vec![normal(rng, &[batch, zd]), normal(rng, &[batch, zd])];
                let inputs: Vec<Tensor<f64>> =
                    model.params().iter().map(|p| p.value.clone()).collect();
                let f = |params: &[Tensor<f64>]| {
                    let mut m = model.clone();
                    for (p, v) in m.params_mut().iter_mut().zip(params) {
                        p.value = v.clone();
                    }
                    let mut tape = Tape::new();
                    let g = elbo_graph(&m, &mut tape, &x, &noise, mode)?;
                    Ok((tape, g.loss, g.binding.params))
                };
                check(&f, &inputs, probe, rng)
            }
        }
    }

    /// Merged report over seeds `0..seeds`.
    pub fn run(self, seeds: u64) -> Result<GradReport, VaeError> {
        let mut total = GradReport::default();
        for seed in 0..seeds {
            total.merge(self.run_seed(seed)?);
        }
        Ok(total)
    }
}

impl fmt::Display for Case {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Case::Conv2d => f.write_str("conv2d"),
            Case::TransposeConv2d => f.write_str("transpose_conv2d"),
            Case::Dense => f.write_str("dense"),
            Case::ReluClamp => f.write_str("relu/clamp"),
            Case::BatchNorm => f.write_str("batchnorm"),
            Case::ShapePlumbing => f.write_str("concat/reshape/slice/scale"),
            Case::Arithmetic => f.write_str("add/sub/mean"),
            Case::ProbabilisticHead => f.write_str("reparameterize/log-likelihood/kl"),
            Case::Elbo(kind, mode) => write!(f, "{kind} ELBO ({mode:?})"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn a_wrong_gradient_is_caught() {
        let graph = |inputs: &[Tensor<f64>]| -> Result<(Tape, Var, Vec<Var>), VaeError> {
            let mut tape = Tape::new();
            let x = tape.leaf(inputs[0].clone());
            let y = tape.scale(x, 2.0);
            let loss = tape.mean(y);
            // Gradients reported for a different leaf than the one perturbed.
            let decoy = tape.leaf(Tensor::zeros([2]));
            Ok((tape, loss, vec![decoy]))
        };
        let x = Tensor::from_fn(vec![2], |i| i as f64);
        let r = check(&graph, &[x], Probe::All, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(!r.passed());
        assert!((r.worst - 1.0).abs() < 1e-6);
    }

    #[test]
    fn single_seed_primitives_pass() {
        for case in &Case::ALL[..8] {
            let r = case.run_seed(3).unwrap();
            assert!(r.passed(), "{case}: {r}");
        }
    }
}
