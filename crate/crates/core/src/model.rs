//! Parameter storage and forward passes for an encoder/decoder pair described by
//! an [`ArchitectureSpec`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Tape, Var};
use crate::ops::{self, BatchStats, ConvSpec, NormMode, BATCH_NORM_EPSILON};
use crate::optim::xavier_init_with;
use crate::tensor::{Real, Tensor};
use crate::vae::GaussianParams;
use crate::zoo::{ActShape, ArchitectureSpec, Layer, ModelError, ModelKind};

/// Log-variances are clamped to this range before exponentiation.
pub const LOG_VAR_MIN: f64 = -10.0;
pub const LOG_VAR_MAX: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T = f64> {
    pub name: String,
    pub value: Tensor<T>,
}

/// Running batch-normalization statistics of one convolution block.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T = f64> {
    pub block: String,
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Init {
    Xavier,
    Zeros,
    Ones,
}

#[derive(Debug, Clone, Copy)]
struct BlockRef {
    spec: ConvSpec,
    kernel: usize,
    bias: usize,
    gamma: usize,
    beta: usize,
    stats: usize,
}

#[derive(Debug, Clone, Copy)]
enum Step {
    Block(BlockRef),
    Fire {
        squeeze: BlockRef,
        e1: BlockRef,
        e3: BlockRef,
    },
    Flatten,
    LatentMap,
    Dense {
        w: usize,
        b: usize,
    },
}

#[derive(Default)]
struct Layout {
    params: Vec<(String, Vec<usize>, Init)>,
    stats: Vec<(String, usize)>,
    encoder: Vec<Step>,
    decoder: Vec<Step>,
}

impl Layout {
    fn param(&mut self, name: String, shape: Vec<usize>, init: Init) -> usize {
        self.params.push((name, shape, init));
        self.params.len() - 1
    }

    fn block(&mut self, name: &str, spec: ConvSpec, in_channels: usize) -> BlockRef {
        let c = spec.out_channels;
        let kernel = self.param(
            format!("{name}.kernel"),
            spec.kernel_shape(in_channels).to_vec(),
            Init::Xavier,
        );
        let bias = self.param(format!("{name}.bias"), vec![c], Init::Zeros);
        let gamma = self.param(format!("{name}.gamma"), vec![c], Init::Ones);
        let beta = self.param(format!("{name}.beta"), vec![c], Init::Zeros);
        self.stats.push((name.to_string(), c));
        BlockRef {
            spec,
            kernel,
            bias,
            gamma,
            beta,
            stats: self.stats.len() - 1,
        }
    }

    fn steps(&mut self, layers: &[Layer], input: ActShape) -> Result<Vec<Step>, ModelError> {
        let shapes = ArchitectureSpec::trace(layers, input)?;
        let mut steps = Vec::with_capacity(layers.len());
        let mut cur = input;
        for (layer, out) in layers.iter().zip(shapes) {
            let in_c = match cur {
                ActShape::Map(_, _, c) => c,
                ActShape::Flat(n) => n,
            };
            steps.push(match layer {
                Layer::Conv { name, spec } => Step::Block(self.block(name, *spec, in_c)),
                Layer::Fire { name, spec } => {
                    let squeeze = self.block(&format!("{name}.squeeze"), spec.squeeze(), in_c);
                    let e1 = self.block(
                        &format!("{name}.extend1x1"),
                        spec.extend1x1(),
                        spec.squeeze_channels,
                    );
                    let e3 = self.block(
                        &format!("{name}.extend3x3"),
                        spec.extend3x3(),
                        spec.squeeze_channels,
                    );
                    Step::Fire { squeeze, e1, e3 }
                }
                Layer::Flatten => Step::Flatten,
                Layer::LatentMap => Step::LatentMap,
                Layer::Dense { name, out: m } => {
                    let w = self.param(format!("{name}.weight"), vec![cur.len(), *m], Init::Xavier);
                    let b = self.param(format!("{name}.bias"), vec![*m], Init::Zeros);
                    Step::Dense { w, b }
                }
            });
            cur = out;
        }
        Ok(steps)
    }

    fn of(arch: &ArchitectureSpec) -> Result<Self, ModelError> {
        arch.validate()?;
        let mut layout = Layout::default();
        layout.encoder = layout.steps(&arch.encoder, arch.input_shape())?;
        layout.decoder = layout.steps(&arch.decoder, ActShape::Flat(arch.latent_dim))?;
        Ok(layout)
    }
}

/// Encoder/decoder parameters plus batch-normalization running statistics.
#[derive(Debug, Clone)]
pub struct VaeModel<T = f64> {
    arch: ArchitectureSpec,
    params: Vec<Param<T>>,
    stats: Vec<RunningStats<T>>,
    encoder: Vec<Step>,
    decoder: Vec<Step>,
}

impl<T: Real> PartialEq for VaeModel<T> {
    fn eq(&self, other: &Self) -> bool {
        self.arch == other.arch && self.params == other.params && self.stats == other.stats
    }
}

impl VaeModel<f64> {
    /// Xavier-uniform kernels and dense weights, zero biases, unit gamma,
    /// zero beta, running mean 0 and running variance 1. One seeded stream is
    /// consumed in parameter order.
    pub fn init(arch: ArchitectureSpec, seed: u64) -> Result<Self, ModelError> {
        let layout = Layout::of(&arch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(layout.params.len());
        for (name, shape, init) in &layout.params {
            let value = match init {
                Init::Xavier => xavier_init_with(shape, &mut rng)?,
                Init::Zeros => Tensor::zeros(shape.clone()),
                Init::Ones => Tensor::full(shape.clone(), 1.0),
            };
            params.push(Param {
                name: name.clone(),
                value,
            });
        }
        let stats = layout
            .stats
            .iter()
            .map(|(block, c)| RunningStats {
                block: block.clone(),
                mean: Tensor::zeros([*c]),
                var: Tensor::full([*c], 1.0),
            })
            .collect();
        Ok(VaeModel {
            arch,
            params,
            stats,
            encoder: layout.encoder,
            decoder: layout.decoder,
        })
    }
}

impl<T: Real> VaeModel<T> {
    /// Reassembles a model from stored tensors, checking them against the layout
    /// the architecture implies.
    pub fn from_parts(
        arch: ArchitectureSpec,
        params: Vec<Param<T>>,
        stats: Vec<RunningStats<T>>,
    ) -> Result<Self, ModelError> {
        let layout = Layout::of(&arch)?;
        if params.len() != layout.params.len() || stats.len() != layout.stats.len() {
            return Err(ModelError::InvalidArchitecture(format!(
                "expected {} parameter tensors and {} running statistics, got {} and {}",
                layout.params.len(),
                layout.stats.len(),
                params.len(),
                stats.len()
            )));
        }
        for (p, (name, shape, _)) in params.iter().zip(&layout.params) {
            if &p.name != name || p.value.shape() != shape.as_slice() {
                return Err(ModelError::InvalidArchitecture(format!(
                    "tensor `{}` {:?} does not match expected `{name}` {shape:?}",
                    p.name,
                    p.value.shape()
                )));
            }
        }
        for (s, (block, c)) in stats.iter().zip(&layout.stats) {
            if &s.block != block || s.mean.shape() != [*c] || s.var.shape() != [*c] {
                return Err(ModelError::InvalidArchitecture(format!(
                    "running statistics for `{}` do not match expected `{block}` with {c} channels",
                    s.block
                )));
            }
        }
        Ok(VaeModel {
            arch,
            params,
            stats,
            encoder: layout.encoder,
            decoder: layout.decoder,
        })
    }

    pub fn arch(&self) -> &ArchitectureSpec {
        &self.arch
    }

    pub fn kind(&self) -> ModelKind {
        self.arch.kind
    }

    pub fn latent_dim(&self) -> usize {
        self.arch.latent_dim
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn running_stats(&self) -> &[RunningStats<T>] {
        &self.stats
    }

    /// Trainable element count, batch-normalization gamma/beta included.
    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> VaeModel<U> {
        VaeModel {
            arch: self.arch.clone(),
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                })
                .collect(),
            stats: self
                .stats
                .iter()
                .map(|s| RunningStats {
                    block: s.block.clone(),
                    mean: s.mean.cast(),
                    var: s.var.cast(),
                })
                .collect(),
            encoder: self.encoder.clone(),
            decoder: self.decoder.clone(),
        }
    }

    /// Accepts `[tw, #f]`, `[batch, tw, #f]` or `[batch, tw, #f, 1]`.
    pub(crate) fn input_batch(&self, x: &Tensor<T>) -> Result<Tensor<T>, ModelError> {
        let (tw, nf) = (self.arch.time_window, self.arch.num_features);
        let batch = match x.shape() {
            [h, w] if (*h, *w) == (tw, nf) => 1,
            [b, h, w] if (*h, *w) == (tw, nf) => *b,
            [b, h, w, 1] if (*h, *w) == (tw, nf) => *b,
            other => {
                return Err(ModelError::InputShape {
                    expected: vec![tw, nf],
                    found: other.to_vec(),
                })
            }
        };
        Ok(x.clone().reshape([batch, tw, nf, 1])?)
    }

    fn infer_block(&self, x: &Tensor<T>, r: &BlockRef) -> Result<Tensor<T>, ModelError> {
        let (k, b) = (&self.params[r.kernel].value, &self.params[r.bias].value);
        let y = if r.spec.transposed {
            ops::transpose_conv2d(x, &r.spec, k, b)?
        } else {
            ops::conv2d(x, &r.spec, k, b)?
        };
        let y = ops::relu(&y);
        let stats = &self.stats[r.stats];
        let mut out = Tensor::zeros(y.shape());
        ops::normalize(
            y.data(),
            stats.mean.data(),
            stats.var.data(),
            self.params[r.gamma].value.data(),
            self.params[r.beta].value.data(),
            BATCH_NORM_EPSILON,
            out.data_mut(),
        );
        Ok(out)
    }

    fn infer_steps(&self, steps: &[Step], mut x: Tensor<T>) -> Result<Tensor<T>, ModelError> {
        for step in steps {
            x = match step {
                Step::Block(r) => self.infer_block(&x, r)?,
                Step::Fire { squeeze, e1, e3 } => {
                    let s = self.infer_block(&x, squeeze)?;
                    let a = self.infer_block(&s, e1)?;
                    let b = self.infer_block(&s, e3)?;
                    concat_channels(&a, &b)?
                }
                Step::Flatten => {
                    let batch = x.batch();
                    let n = x.len() / batch;
                    x.reshape([batch, n])?
                }
                Step::LatentMap => {
                    let (batch, z) = x.dims2("latent_map")?;
                    x.reshape([batch, 1, 1, z])?
                }
                Step::Dense { w, b } => {
                    ops::dense(&x, &self.params[*w].value, &self.params[*b].value)?
                }
            };
        }
        Ok(x)
    }

    /// Posterior `q(z|x)` with running batch-normalization statistics.
    pub fn encode(&self, x: &Tensor<T>) -> Result<GaussianParams<T>, ModelError> {
        let out = self.infer_steps(&self.encoder, self.input_batch(x)?)?;
        Ok(GaussianParams::split(&out, self.arch.latent_dim)?)
    }

    /// Reconstruction distribution `p(x|z)` for `z` of shape `[batch, Z]`, as
    /// flattened `[batch, tw·#f]` mean and log-variance.
    pub fn decode(&self, z: &Tensor<T>) -> Result<GaussianParams<T>, ModelError> {
        let (_, zd) = z.dims2("decode")?;
        if zd != self.arch.latent_dim {
            return Err(ModelError::InputShape {
                expected: vec![self.arch.latent_dim],
                found: z.shape().to_vec(),
            });
        }
        let out = self.infer_steps(&self.decoder, z.clone())?;
        Ok(GaussianParams::split(&out, self.arch.window_len())?)
    }
}

fn concat_channels<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, ModelError> {
    let (ca, cb) = (*a.shape().last().unwrap(), *b.shape().last().unwrap());
    let mut shape = a.shape().to_vec();
    *shape.last_mut().unwrap() = ca + cb;
    let mut data = Vec::with_capacity(a.len() + b.len());
    for (ra, rb) in a.data().chunks_exact(ca).zip(b.data().chunks_exact(cb)) {
        data.extend_from_slice(ra);
        data.extend_from_slice(rb);
    }
    Ok(Tensor::new(shape, data)?)
}

/// A model's parameters registered as tape leaves, plus the batch statistics
/// produced by training-mode normalization during the recorded pass.
pub struct TapeBinding {
    pub params: Vec<Var>,
    pub batch_stats: Vec<Option<BatchStats<f64>>>,
}

impl VaeModel<f64> {
    pub fn bind(&self, tape: &mut Tape) -> TapeBinding {
        TapeBinding {
            params: self
                .params
                .iter()
                .map(|p| tape.leaf(p.value.clone()))
                .collect(),
            batch_stats: vec![None; self.stats.len()],
        }
    }

    fn tape_block(
        &self,
        tape: &mut Tape,
        bind: &mut TapeBinding,
        x: Var,
        r: &BlockRef,
        mode: NormMode,
    ) -> Result<Var, ModelError> {
        let p = &bind.params;
        let y = if r.spec.transposed {
            tape.transpose_conv2d(x, &r.spec, p[r.kernel], p[r.bias])?
        } else {
            tape.conv2d(x, &r.spec, p[r.kernel], p[r.bias])?
        };
        let y = tape.relu(y);
        match mode {
            NormMode::Train => {
                let (out, stats) =
                    tape.batchnorm_train(y, p[r.gamma], p[r.beta], BATCH_NORM_EPSILON)?;
                bind.batch_stats[r.stats] = Some(stats);
                Ok(out)
            }
            NormMode::Infer => {
                let s = &self.stats[r.stats];
                Ok(tape.batchnorm_infer(
                    y,
                    p[r.gamma],
                    p[r.beta],
                    s.mean.data(),
                    s.var.data(),
                    BATCH_NORM_EPSILON,
                )?)
            }
        }
    }

    fn tape_steps(
        &self,
        tape: &mut Tape,
        bind: &mut TapeBinding,
        steps: &[Step],
        mut x: Var,
        mode: NormMode,
    ) -> Result<Var, ModelError> {
        for step in steps {
            x = match step {
                Step::Block(r) => self.tape_block(tape, bind, x, r, mode)?,
                Step::Fire { squeeze, e1, e3 } => {
                    let s = self.tape_block(tape, bind, x, squeeze, mode)?;
                    let a = self.tape_block(tape, bind, s, e1, mode)?;
                    let b = self.tape_block(tape, bind, s, e3, mode)?;
                    tape.concat_channels(a, b)?
                }
                Step::Flatten => {
                    let shape = tape.value(x).shape();
                    let batch = shape[0];
                    let n = shape.iter().product::<usize>() / batch;
                    tape.reshape(x, &[batch, n])?
                }
                Step::LatentMap => {
                    let (batch, z) = tape.value(x).dims2("latent_map")?;
                    tape.reshape(x, &[batch, 1, 1, z])?
                }
                Step::Dense { w, b } => tape.dense(x, bind.params[*w], bind.params[*b])?,
            };
        }
        Ok(x)
    }

    /// Records the encoder; returns `(mean, clamped log-variance)` nodes of shape `[batch, Z]`.
    pub fn encode_on_tape(
        &self,
        tape: &mut Tape,
        bind: &mut TapeBinding,
        x: &Tensor<f64>,
        mode: NormMode,
    ) -> Result<(Var, Var), ModelError> {
        let input = tape.leaf(self.input_batch(x)?);
        let out = self.tape_steps(tape, bind, &self.encoder, input, mode)?;
        split_on_tape(tape, out, self.arch.latent_dim)
    }

    /// Records the decoder for `z` of shape `[batch, Z]`; returns flattened
    /// `(mean, clamped log-variance)` nodes of shape `[batch, tw·#f]`.
    pub fn decode_on_tape(
        &self,
        tape: &mut Tape,
        bind: &mut TapeBinding,
        z: Var,
        mode: NormMode,
    ) -> Result<(Var, Var), ModelError> {
        let out = self.tape_steps(tape, bind, &self.decoder, z, mode)?;
        split_on_tape(tape, out, self.arch.window_len())
    }

    /// Folds recorded batch statistics into the running averages.
    pub fn apply_batch_stats(&mut self, stats: &[Option<BatchStats<f64>>]) {
        for (running, batch) in self.stats.iter_mut().zip(stats) {
            if let Some(batch) = batch {
                let mut state = ops::BatchNormState::<f64>::new(running.mean.len());
                state.running_mean = running.mean.clone();
                state.running_var = running.var.clone();
                state.update_running(batch);
                running.mean = state.running_mean;
                running.var = state.running_var;
            }
        }
    }
}

fn split_on_tape(tape: &mut Tape, out: Var, half: usize) -> Result<(Var, Var), ModelError> {
    let mean = tape.slice_columns(out, 0, half)?;
    let raw = tape.slice_columns(out, half, half)?;
    let log_var = tape.clamp(raw, LOG_VAR_MIN, LOG_VAR_MAX);
    Ok((mean, log_var))
}
