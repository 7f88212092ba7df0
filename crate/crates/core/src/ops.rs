//! Layer primitives: stride-1 convolution and its adjoint, dense maps, relu and
//! batch normalization, each with the kernels its gradient needs.
//!
//! Convolution kernels are laid out `[k, k, in_channels, out_channels]`. A
//! transposed convolution is the adjoint of a forward convolution and shares
//! that convolution's kernel, so its kernel is `[k, k, out_channels, in_channels]`
//! when read from the transposed layer's point of view.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::tensor::{axpy, dot, shape_err, Real, Result, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Padding {
    Same,
    Valid,
}

impl Padding {
    /// Zero padding before and after a spatial axis for a stride-1 kernel.
    /// Odd totals put the extra zero on the high-index side.
    pub fn pads(self, kernel: usize) -> (usize, usize) {
        match self {
            Padding::Valid => (0, 0),
            Padding::Same => {
                let total = kernel - 1;
                (total / 2, total - total / 2)
            }
        }
    }

    /// Output extent of a forward convolution over `extent` input positions.
    pub fn conv_extent(self, extent: usize, kernel: usize) -> Option<usize> {
        match self {
            Padding::Same => Some(extent),
            Padding::Valid => extent.checked_sub(kernel - 1).filter(|&e| e > 0),
        }
    }

    /// Output extent of a transposed convolution over `extent` input positions.
    pub fn transpose_extent(self, extent: usize, kernel: usize) -> usize {
        match self {
            Padding::Same => extent,
            Padding::Valid => extent + kernel - 1,
        }
    }
}

impl fmt::Display for Padding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Padding::Same => "SAME",
            Padding::Valid => "VALID",
        })
    }
}

impl FromStr for Padding {
    type Err = TensorError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "SAME" => Ok(Padding::Same),
            "VALID" => Ok(Padding::Valid),
            other => Err(TensorError::Invalid(format!("unknown padding `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: Padding,
    pub transposed: bool,
}

impl ConvSpec {
    pub fn new(out_channels: usize, kernel: usize, padding: Padding, transposed: bool) -> Self {
        ConvSpec {
            out_channels,
            kernel,
            stride: 1,
            padding,
            transposed,
        }
    }

    fn validate(&self, op: &'static str, transposed: bool) -> Result<()> {
        if self.transposed != transposed {
            return Err(TensorError::Invalid(format!(
                "{op}: spec has transposed={}, expected {transposed}",
                self.transposed
            )));
        }
        if self.stride != 1 {
            return Err(TensorError::Invalid(format!(
                "{op}: only stride 1 is supported, got {}",
                self.stride
            )));
        }
        if self.kernel == 0 || self.out_channels == 0 {
            return Err(TensorError::Invalid(format!(
                "{op}: kernel and channel counts must be positive"
            )));
        }
        Ok(())
    }

    /// Kernel tensor shape for a layer reading `in_channels` channels.
    pub fn kernel_shape(&self, in_channels: usize) -> [usize; 4] {
        if self.transposed {
            [self.kernel, self.kernel, self.out_channels, in_channels]
        } else {
            [self.kernel, self.kernel, in_channels, self.out_channels]
        }
    }
}

/// Geometry of one stride-1 correlation between a "wide" map (the forward
/// convolution's input) and a "narrow" map (its output).
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub wide_h: usize,
    pub wide_w: usize,
    pub wide_c: usize,
    pub narrow_h: usize,
    pub narrow_w: usize,
    pub narrow_c: usize,
    pub kernel: usize,
    pub pad: usize,
}

impl ConvGeom {
    /// Calls `f(narrow_offset, wide_offset, kernel_tap)` for every in-bounds tap.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let k = self.kernel;
        for b in 0..self.batch {
            for i in 0..self.narrow_h {
                for j in 0..self.narrow_w {
                    let n_off = ((b * self.narrow_h + i) * self.narrow_w + j) * self.narrow_c;
                    for di in 0..k {
                        let p = i + di;
                        if p < self.pad || p - self.pad >= self.wide_h {
                            continue;
                        }
                        let p = p - self.pad;
                        for dj in 0..k {
                            let q = j + dj;
                            if q < self.pad || q - self.pad >= self.wide_w {
                                continue;
                            }
                            let q = q - self.pad;
                            let w_off = ((b * self.wide_h + p) * self.wide_w + q) * self.wide_c;
                            f(n_off, w_off, di * k + dj);
                        }
                    }
                }
            }
        }
    }

    /// narrow += correlate(wide, kernel[k,k,wide_c,narrow_c])
    pub fn forward<T: Real>(&self, wide: &[T], kernel: &[T], narrow: &mut [T]) {
        let (wc, nc) = (self.wide_c, self.narrow_c);
        self.for_each_tap(|n_off, w_off, tap| {
            let out = &mut narrow[n_off..n_off + nc];
            let k_tap = &kernel[tap * wc * nc..(tap + 1) * wc * nc];
            for (ci, &x) in wide[w_off..w_off + wc].iter().enumerate() {
                axpy(x, &k_tap[ci * nc..(ci + 1) * nc], out);
            }
        });
    }

    /// wide += adjoint of `forward` applied to `narrow`.
    pub fn adjoint<T: Real>(&self, narrow: &[T], kernel: &[T], wide: &mut [T]) {
        let (wc, nc) = (self.wide_c, self.narrow_c);
        self.for_each_tap(|n_off, w_off, tap| {
            let y = &narrow[n_off..n_off + nc];
            let k_tap = &kernel[tap * wc * nc..(tap + 1) * wc * nc];
            for (ci, out) in wide[w_off..w_off + wc].iter_mut().enumerate() {
                *out += dot(&k_tap[ci * nc..(ci + 1) * nc], y);
            }
        });
    }

    /// kernel_grad[k,k,wide_c,narrow_c] += Σ wide ⊗ narrow over all taps.
    pub fn kernel_grad<T: Real>(&self, wide: &[T], narrow: &[T], kernel_grad: &mut [T]) {
        let (wc, nc) = (self.wide_c, self.narrow_c);
        self.for_each_tap(|n_off, w_off, tap| {
            let y = &narrow[n_off..n_off + nc];
            let g_tap = &mut kernel_grad[tap * wc * nc..(tap + 1) * wc * nc];
            for (ci, &x) in wide[w_off..w_off + wc].iter().enumerate() {
                axpy(x, y, &mut g_tap[ci * nc..(ci + 1) * nc]);
            }
        });
    }
}

fn check_kernel<T: Real>(
    op: &'static str,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    expected: [usize; 4],
    out_channels: usize,
) -> Result<()> {
    if kernel.shape() != expected {
        return Err(shape_err(op, expected, kernel.shape()));
    }
    if bias.shape() != [out_channels] {
        return Err(shape_err(op, [out_channels], bias.shape()));
    }
    Ok(())
}

fn add_channel_bias<T: Real>(out: &mut [T], bias: &[T]) {
    for row in out.chunks_exact_mut(bias.len()) {
        for (o, &b) in row.iter_mut().zip(bias) {
            *o += b;
        }
    }
}

pub(crate) fn conv_geom(
    input_shape: (usize, usize, usize, usize),
    spec: &ConvSpec,
) -> Result<ConvGeom> {
    let (batch, h, w, cin) = input_shape;
    let k = spec.kernel;
    let oh = spec
        .padding
        .conv_extent(h, k)
        .ok_or(TensorError::InputSmallerThanKernel {
            op: "conv2d",
            extent: h,
            kernel: k,
        })?;
    let ow = spec
        .padding
        .conv_extent(w, k)
        .ok_or(TensorError::InputSmallerThanKernel {
            op: "conv2d",
            extent: w,
            kernel: k,
        })?;
    Ok(ConvGeom {
        batch,
        wide_h: h,
        wide_w: w,
        wide_c: cin,
        narrow_h: oh,
        narrow_w: ow,
        narrow_c: spec.out_channels,
        kernel: k,
        pad: spec.padding.pads(k).0,
    })
}

pub(crate) fn transpose_geom(
    input_shape: (usize, usize, usize, usize),
    spec: &ConvSpec,
) -> ConvGeom {
    let (batch, h, w, cin) = input_shape;
    let k = spec.kernel;
    ConvGeom {
        batch,
        wide_h: spec.padding.transpose_extent(h, k),
        wide_w: spec.padding.transpose_extent(w, k),
        wide_c: spec.out_channels,
        narrow_h: h,
        narrow_w: w,
        narrow_c: cin,
        kernel: k,
        pad: spec.padding.pads(k).0,
    }
}

/// Stride-1 cross-correlation plus bias over `[batch, H, W, Cin]`.
pub fn conv2d<T: Real>(
    input: &Tensor<T>,
    spec: &ConvSpec,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    spec.validate("conv2d", false)?;
    let dims = input.dims4("conv2d")?;
    check_kernel(
        "conv2d",
        kernel,
        bias,
        spec.kernel_shape(dims.3),
        spec.out_channels,
    )?;
    let g = conv_geom(dims, spec)?;
    let mut out = Tensor::zeros([g.batch, g.narrow_h, g.narrow_w, g.narrow_c]);
    g.forward(input.data(), kernel.data(), out.data_mut());
    add_channel_bias(out.data_mut(), bias.data());
    Ok(out)
}

/// Transposed convolution: the adjoint of `conv2d` with respect to its input, plus bias.
pub fn transpose_conv2d<T: Real>(
    input: &Tensor<T>,
    spec: &ConvSpec,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    spec.validate("transpose_conv2d", true)?;
    let dims = input.dims4("transpose_conv2d")?;
    check_kernel(
        "transpose_conv2d",
        kernel,
        bias,
        spec.kernel_shape(dims.3),
        spec.out_channels,
    )?;
    let g = transpose_geom(dims, spec);
    let mut out = Tensor::zeros([g.batch, g.wide_h, g.wide_w, g.wide_c]);
    g.adjoint(input.data(), kernel.data(), out.data_mut());
    add_channel_bias(out.data_mut(), bias.data());
    Ok(out)
}

/// Affine map `x W + b` applied to each batch row; trailing input dims are flattened.
pub fn dense<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (n, m) = weights.dims2("dense")?;
    if bias.shape() != [m] {
        return Err(shape_err("dense", [m], bias.shape()));
    }
    let batch = input.batch();
    if input.rank() < 2 || input.len() != batch * n {
        return Err(shape_err(
            "dense",
            format!("[batch, {n}] after flattening"),
            input.shape(),
        ));
    }
    let mut out = Tensor::zeros([batch, m]);
    dense_forward(
        input.data(),
        weights.data(),
        bias.data(),
        n,
        m,
        out.data_mut(),
    );
    Ok(out)
}

pub(crate) fn dense_forward<T: Real>(
    x: &[T],
    w: &[T],
    bias: &[T],
    n: usize,
    m: usize,
    out: &mut [T],
) {
    for (xr, or) in x.chunks_exact(n).zip(out.chunks_exact_mut(m)) {
        or.copy_from_slice(bias);
        for (i, &xv) in xr.iter().enumerate() {
            axpy(xv, &w[i * m..(i + 1) * m], or);
        }
    }
}

pub fn relu<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Subgradient of relu: 1 where the input is positive, 0 elsewhere (including 0).
pub fn relu_backward<T: Real>(input: &Tensor<T>, upstream: &Tensor<T>) -> Result<Tensor<T>> {
    if input.shape() != upstream.shape() {
        return Err(shape_err("relu_backward", input.shape(), upstream.shape()));
    }
    let data = input
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(input.shape(), data)
}

pub const BATCH_NORM_DECAY: f64 = 0.9;
pub const BATCH_NORM_EPSILON: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    Train,
    Infer,
}

/// Per-channel batch normalization parameters and running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState<T = f64> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub decay: f64,
    pub epsilon: f64,
}

impl<T: Real> BatchNormState<T> {
    pub fn new(channels: usize) -> Self {
        BatchNormState {
            gamma: Tensor::full([channels], T::one()),
            beta: Tensor::zeros([channels]),
            running_mean: Tensor::zeros([channels]),
            running_var: Tensor::full([channels], T::one()),
            decay: BATCH_NORM_DECAY,
            epsilon: BATCH_NORM_EPSILON,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// `running ← decay·running + (1−decay)·batch` for both statistics.
    pub fn update_running(&mut self, stats: &BatchStats<T>) {
        let d = T::from_f64_lossy(self.decay);
        let one_minus = T::one() - d;
        for (r, &m) in self.running_mean.data_mut().iter_mut().zip(&stats.mean) {
            *r = d * *r + one_minus * m;
        }
        for (r, &v) in self.running_var.data_mut().iter_mut().zip(&stats.var) {
            *r = d * *r + one_minus * v;
        }
    }
}

/// Per-channel biased mean and variance of one training batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats<T = f64> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

pub(crate) fn channel_stats<T: Real>(x: &[T], channels: usize) -> BatchStats<T> {
    let count = T::from_usize(x.len() / channels).unwrap();
    let mut mean = vec![T::zero(); channels];
    for row in x.chunks_exact(channels) {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m = *m / count);
    let mut var = vec![T::zero(); channels];
    for row in x.chunks_exact(channels) {
        for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
            let d = v - m;
            *s += d * d;
        }
    }
    var.iter_mut().for_each(|s| *s = *s / count);
    BatchStats { mean, var }
}

pub(crate) fn normalize<T: Real>(
    x: &[T],
    mean: &[T],
    var: &[T],
    gamma: &[T],
    beta: &[T],
    epsilon: f64,
    out: &mut [T],
) {
    let eps = T::from_f64_lossy(epsilon);
    let scale: Vec<T> = var
        .iter()
        .zip(gamma)
        .map(|(&v, &g)| g / (v + eps).sqrt())
        .collect();
    let c = mean.len();
    for (xr, or) in x.chunks_exact(c).zip(out.chunks_exact_mut(c)) {
        for ch in 0..c {
            or[ch] = (xr[ch] - mean[ch]) * scale[ch] + beta[ch];
        }
    }
}

fn check_bn<T: Real>(input: &Tensor<T>, state: &BatchNormState<T>) -> Result<usize> {
    let c = state.channels();
    if input.shape().last() != Some(&c) {
        return Err(shape_err(
            "batchnorm",
            format!("trailing channel extent {c}"),
            input.shape(),
        ));
    }
    Ok(c)
}

/// Normalizes with batch statistics and folds them into the running statistics.
pub fn batchnorm_train<T: Real>(
    input: &Tensor<T>,
    state: &mut BatchNormState<T>,
) -> Result<(Tensor<T>, BatchStats<T>)> {
    let c = check_bn(input, state)?;
    if input.batch() < 2 {
        return Err(TensorError::BatchTooSmall(input.batch()));
    }
    let stats = channel_stats(input.data(), c);
    let mut out = Tensor::zeros(input.shape());
    normalize(
        input.data(),
        &stats.mean,
        &stats.var,
        state.gamma.data(),
        state.beta.data(),
        state.epsilon,
        out.data_mut(),
    );
    state.update_running(&stats);
    Ok((out, stats))
}

/// Normalizes with the running statistics; the state is untouched.
pub fn batchnorm_infer<T: Real>(input: &Tensor<T>, state: &BatchNormState<T>) -> Result<Tensor<T>> {
    check_bn(input, state)?;
    let mut out = Tensor::zeros(input.shape());
    normalize(
        input.data(),
        state.running_mean.data(),
        state.running_var.data(),
        state.gamma.data(),
        state.beta.data(),
        state.epsilon,
        out.data_mut(),
    );
    Ok(out)
}

pub fn batchnorm<T: Real>(
    input: &Tensor<T>,
    state: &mut BatchNormState<T>,
    mode: NormMode,
) -> Result<Tensor<T>> {
    match mode {
        NormMode::Train => batchnorm_train(input, state).map(|(out, _)| out),
        NormMode::Infer => batchnorm_infer(input, state),
    }
}
