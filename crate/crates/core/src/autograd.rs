//! Reverse-mode differentiation over a recorded tape of layer primitives.
//!
//! Every forward call appends a node holding its value plus whatever the
//! backward rule needs; `backward` walks the tape in reverse once. The tape runs
//! at `f64`, which is what training and gradient checks use.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use crate::ops::{self, BatchStats, ConvGeom, ConvSpec};
use crate::tensor::{shape_err, Result, Tensor, TensorError};

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv {
        x: Var,
        k: Var,
        b: Var,
        geom: ConvGeom,
    },
    ConvTranspose {
        x: Var,
        k: Var,
        b: Var,
        geom: ConvGeom,
    },
    Dense {
        x: Var,
        w: Var,
        b: Var,
        n: usize,
        m: usize,
    },
    Relu {
        x: Var,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        train: bool,
    },
    Concat {
        a: Var,
        b: Var,
        ca: usize,
        cb: usize,
    },
    Reshape {
        x: Var,
    },
    Slice {
        x: Var,
        start: usize,
        len: usize,
        width: usize,
    },
    Clamp {
        x: Var,
        lo: f64,
        hi: f64,
    },
    Reparameterize {
        mean: Var,
        log_var: Var,
        noise: Vec<f64>,
    },
    GaussianLogLik {
        target: Vec<f64>,
        mean: Var,
        log_var: Var,
        dims: usize,
    },
    KlStdNormal {
        mean: Var,
        log_var: Var,
        dims: usize,
    },
    Add {
        a: Var,
        b: Var,
    },
    Sub {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        c: f64,
    },
    Mean {
        x: Var,
    },
}

struct Node {
    value: Tensor<f64>,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients indexed by tape node.
pub struct Gradients {
    grads: Vec<Option<Tensor<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor<f64>> {
        self.grads[v.0].as_ref()
    }

    /// The gradient, or zeros when the loss does not depend on `v`.
    pub fn get_or_zeros(&self, v: Var) -> Tensor<f64> {
        self.grads[v.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(self.shapes[v.0].clone()))
    }

    pub fn take_or_zeros(&mut self, v: Var) -> Tensor<f64> {
        self.grads[v.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(self.shapes[v.0].clone()))
    }
}

fn accumulate(grads: &mut [Option<Tensor<f64>>], v: Var, shape: &[usize], delta: Vec<f64>) {
    match &mut grads[v.0] {
        Some(g) => {
            for (a, b) in g.data_mut().iter_mut().zip(delta) {
                *a += b;
            }
        }
        slot @ None => {
            *slot = Some(Tensor::new(shape.to_vec(), delta).expect("gradient matches node shape"))
        }
    }
}

fn channel_sums(data: &[f64], channels: usize) -> Vec<f64> {
    let mut out = vec![0.0; channels];
    for row in data.chunks_exact(channels) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<f64> {
        &self.nodes[v.0].value
    }

    pub fn leaf(&mut self, value: Tensor<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn conv2d(&mut self, x: Var, spec: &ConvSpec, k: Var, b: Var) -> Result<Var> {
        let out = ops::conv2d(self.value(x), spec, self.value(k), self.value(b))?;
        let geom = ops::conv_geom(self.value(x).dims4("conv2d")?, spec)?;
        Ok(self.push(out, Op::Conv { x, k, b, geom }))
    }

    pub fn transpose_conv2d(&mut self, x: Var, spec: &ConvSpec, k: Var, b: Var) -> Result<Var> {
        let out = ops::transpose_conv2d(self.value(x), spec, self.value(k), self.value(b))?;
        let geom = ops::transpose_geom(self.value(x).dims4("transpose_conv2d")?, spec);
        Ok(self.push(out, Op::ConvTranspose { x, k, b, geom }))
    }

    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let out = ops::dense(self.value(x), self.value(w), self.value(b))?;
        let (n, m) = self.value(w).dims2("dense")?;
        Ok(self.push(out, Op::Dense { x, w, b, n, m }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = ops::relu(self.value(x));
        self.push(out, Op::Relu { x })
    }

    /// Training-mode batch normalization. The returned statistics are what the
    /// caller folds into its running averages.
    pub fn batchnorm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        epsilon: f64,
    ) -> Result<(Var, BatchStats<f64>)> {
        let input = self.value(x);
        let c = self.value(gamma).len();
        if input.shape().last() != Some(&c) || self.value(beta).len() != c {
            return Err(shape_err(
                "batchnorm",
                format!("trailing channel extent {c}"),
                input.shape(),
            ));
        }
        if input.batch() < 2 {
            return Err(TensorError::BatchTooSmall(input.batch()));
        }
        let stats = ops::channel_stats(input.data(), c);
        let out = self.normalize_node(x, gamma, beta, &stats.mean, &stats.var, epsilon, true);
        Ok((out, stats))
    }

    /// Inference-mode batch normalization against fixed running statistics.
    pub fn batchnorm_infer(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[f64],
        running_var: &[f64],
        epsilon: f64,
    ) -> Result<Var> {
        let c = self.value(gamma).len();
        if self.value(x).shape().last() != Some(&c)
            || running_mean.len() != c
            || running_var.len() != c
        {
            return Err(shape_err(
                "batchnorm",
                format!("trailing channel extent {c}"),
                self.value(x).shape(),
            ));
        }
        Ok(self.normalize_node(x, gamma, beta, running_mean, running_var, epsilon, false))
    }

    #[allow(clippy::too_many_arguments)]
    fn normalize_node(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        var: &[f64],
        epsilon: f64,
        train: bool,
    ) -> Var {
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + epsilon).sqrt()).collect();
        let input = self.value(x);
        let c = mean.len();
        let mut xhat = vec![0.0; input.len()];
        for (xr, hr) in input.data().chunks_exact(c).zip(xhat.chunks_exact_mut(c)) {
            for ch in 0..c {
                hr[ch] = (xr[ch] - mean[ch]) * inv_std[ch];
            }
        }
        let (g, bt) = (self.value(gamma).data(), self.value(beta).data());
        let mut out = Tensor::zeros(input.shape());
        for (hr, or) in xhat.chunks_exact(c).zip(out.data_mut().chunks_exact_mut(c)) {
            for ch in 0..c {
                or[ch] = g[ch] * hr[ch] + bt[ch];
            }
        }
        self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            },
        )
    }

    /// Channel concatenation of two maps with equal leading extents.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != sb.len() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return Err(shape_err("concat_channels", sa, sb));
        }
        let (ca, cb) = (*sa.last().unwrap(), *sb.last().unwrap());
        let mut shape = sa.to_vec();
        *shape.last_mut().unwrap() = ca + cb;
        let mut data = Vec::with_capacity(self.value(a).len() + self.value(b).len());
        for (ra, rb) in self
            .value(a)
            .data()
            .chunks_exact(ca)
            .zip(self.value(b).data().chunks_exact(cb))
        {
            data.extend_from_slice(ra);
            data.extend_from_slice(rb);
        }
        let out = Tensor::new(shape, data)?;
        Ok(self.push(out, Op::Concat { a, b, ca, cb }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape { x }))
    }

    /// Columns `start..start+len` of a `[batch, width]` matrix.
    pub fn slice_columns(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (batch, width) = self.value(x).dims2("slice_columns")?;
        if start + len > width {
            return Err(shape_err(
                "slice_columns",
                format!("{} columns", start + len),
                width,
            ));
        }
        let data = self
            .value(x)
            .data()
            .chunks_exact(width)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let out = Tensor::new([batch, len], data)?;
        Ok(self.push(
            out,
            Op::Slice {
                x,
                start,
                len,
                width,
            },
        ))
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let out = self.value(x).map(|v| v.clamp(lo, hi));
        self.push(out, Op::Clamp { x, lo, hi })
    }

    /// `mean + exp(0.5·log_var)·noise`.
    pub fn reparameterize(&mut self, mean: Var, log_var: Var, noise: &Tensor<f64>) -> Result<Var> {
        let (m, lv) = (self.value(mean), self.value(log_var));
        if m.shape() != lv.shape() || m.shape() != noise.shape() {
            return Err(shape_err("reparameterize", m.shape(), noise.shape()));
        }
        let data = m
            .data()
            .iter()
            .zip(lv.data())
            .zip(noise.data())
            .map(|((&mu, &l), &e)| mu + (0.5 * l).exp() * e)
            .collect();
        let out = Tensor::new(m.shape(), data)?;
        Ok(self.push(
            out,
            Op::Reparameterize {
                mean,
                log_var,
                noise: noise.data().to_vec(),
            },
        ))
    }

    /// Per-sample diagonal Gaussian log-density of `target` rows, shape `[batch]`.
    pub fn gaussian_log_likelihood(
        &mut self,
        target: &Tensor<f64>,
        mean: Var,
        log_var: Var,
    ) -> Result<Var> {
        let (m, lv) = (self.value(mean), self.value(log_var));
        if m.shape() != lv.shape() || m.shape() != target.shape() {
            return Err(shape_err(
                "gaussian_log_likelihood",
                m.shape(),
                target.shape(),
            ));
        }
        let (batch, dims) = m.dims2("gaussian_log_likelihood")?;
        let data = (0..batch)
            .map(|b| {
                let r = b * dims..(b + 1) * dims;
                crate::vae::gaussian_log_density(
                    &target.data()[r.clone()],
                    &m.data()[r.clone()],
                    &lv.data()[r],
                )
            })
            .collect();
        let out = Tensor::new([batch], data)?;
        Ok(self.push(
            out,
            Op::GaussianLogLik {
                target: target.data().to_vec(),
                mean,
                log_var,
                dims,
            },
        ))
    }

    /// Per-sample `KL(N(mean, exp(log_var)) || N(0, I))`, shape `[batch]`.
    pub fn kl_std_normal(&mut self, mean: Var, log_var: Var) -> Result<Var> {
        let (m, lv) = (self.value(mean), self.value(log_var));
        if m.shape() != lv.shape() {
            return Err(shape_err("kl_std_normal", m.shape(), lv.shape()));
        }
        let (batch, dims) = m.dims2("kl_std_normal")?;
        let data = (0..batch)
            .map(|b| {
                let r = b * dims..(b + 1) * dims;
                crate::vae::kl_std_normal(&m.data()[r.clone()], &lv.data()[r])
            })
            .collect();
        let out = Tensor::new([batch], data)?;
        Ok(self.push(
            out,
            Op::KlStdNormal {
                mean,
                log_var,
                dims,
            },
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b))?;
        Ok(self.push(out, Op::Add { a, b }))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(shape_err("sub", va.shape(), vb.shape()));
        }
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(x, y)| x - y)
            .collect();
        let out = Tensor::new(va.shape(), data)?;
        Ok(self.push(out, Op::Sub { a, b }))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| v * c);
        self.push(out, Op::Scale { x, c })
    }

    /// Mean over all elements, as a one-element tensor.
    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let out = Tensor::scalar(v.sum() / v.len() as f64);
        self.push(out, Op::Mean { x })
    }

    /// Hash of every relu on/off pattern and clamp saturation pattern on the tape.
    /// Two forward passes with equal signatures sit on the same smooth piece.
    pub fn kink_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            match node.op {
                Op::Relu { x } => {
                    for &v in self.value(x).data() {
                        (v > 0.0).hash(&mut h);
                    }
                }
                Op::Clamp { x, lo, hi } => {
                    for &v in self.value(x).data() {
                        ((v < lo) as u8 + 2 * (v > hi) as u8).hash(&mut h);
                    }
                }
                _ => {}
            }
        }
        h.finish()
    }

    /// Reverse sweep from a one-element `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.value(root).len() != 1 {
            return Err(shape_err(
                "backward",
                "a one-element loss",
                self.value(root).shape(),
            ));
        }
        let shapes: Vec<Vec<usize>> = self
            .nodes
            .iter()
            .map(|n| n.value.shape().to_vec())
            .collect();
        let mut grads: Vec<Option<Tensor<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::full(shapes[root.0].clone(), 1.0));

        for idx in (0..=root.0).rev() {
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            let dy = upstream.data();
            let node = &self.nodes[idx];
            let val = |v: Var| self.nodes[v.0].value.data();
            match &node.op {
                Op::Leaf => {}
                Op::Conv { x, k, b, geom } => {
                    let mut dx = vec![0.0; val(*x).len()];
                    geom.adjoint(dy, val(*k), &mut dx);
                    let mut dk = vec![0.0; val(*k).len()];
                    geom.kernel_grad(val(*x), dy, &mut dk);
                    let db = channel_sums(dy, geom.narrow_c);
                    accumulate(&mut grads, *x, &shapes[x.0], dx);
                    accumulate(&mut grads, *k, &shapes[k.0], dk);
                    accumulate(&mut grads, *b, &shapes[b.0], db);
                }
                Op::ConvTranspose { x, k, b, geom } => {
                    let mut dx = vec![0.0; val(*x).len()];
                    geom.forward(dy, val(*k), &mut dx);
                    let mut dk = vec![0.0; val(*k).len()];
                    geom.kernel_grad(dy, val(*x), &mut dk);
                    let db = channel_sums(dy, geom.wide_c);
                    accumulate(&mut grads, *x, &shapes[x.0], dx);
                    accumulate(&mut grads, *k, &shapes[k.0], dk);
                    accumulate(&mut grads, *b, &shapes[b.0], db);
                }
                Op::Dense { x, w, b, n, m } => {
                    let (n, m) = (*n, *m);
                    let (xv, wv) = (val(*x), val(*w));
                    let mut dx = vec![0.0; xv.len()];
                    let mut dw = vec![0.0; wv.len()];
                    for (xr, (dyr, dxr)) in xv
                        .chunks_exact(n)
                        .zip(dy.chunks_exact(m).zip(dx.chunks_exact_mut(n)))
                    {
                        for i in 0..n {
                            let wr = &wv[i * m..(i + 1) * m];
                            dxr[i] = crate::tensor::dot(wr, dyr);
                            crate::tensor::axpy(xr[i], dyr, &mut dw[i * m..(i + 1) * m]);
                        }
                    }
                    let db = channel_sums(dy, m);
                    accumulate(&mut grads, *x, &shapes[x.0], dx);
                    accumulate(&mut grads, *w, &shapes[w.0], dw);
                    accumulate(&mut grads, *b, &shapes[b.0], db);
                }
                Op::Relu { x } => {
                    let dx = val(*x)
                        .iter()
                        .zip(dy)
                        .map(|(&xv, &g)| if xv > 0.0 { g } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, *x, &shapes[x.0], dx);
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                    train,
                } => {
                    let c = inv_std.len();
                    let g = val(*gamma);
                    let count = (dy.len() / c) as f64;
                    let sum_dy = channel_sums(dy, c);
                    let mut sum_dy_xhat = vec![0.0; c];
                    for (dr, hr) in dy.chunks_exact(c).zip(xhat.chunks_exact(c)) {
                        for ch in 0..c {
                            sum_dy_xhat[ch] += dr[ch] * hr[ch];
                        }
                    }
                    let mut dx = vec![0.0; dy.len()];
                    for ((dr, hr), out) in dy
                        .chunks_exact(c)
                        .zip(xhat.chunks_exact(c))
                        .zip(dx.chunks_exact_mut(c))
                    {
                        for ch in 0..c {
                            let s = g[ch] * inv_std[ch];
                            out[ch] = if *train {
                                s * (dr[ch] - sum_dy[ch] / count - hr[ch] * sum_dy_xhat[ch] / count)
                            } else {
                                s * dr[ch]
                            };
                        }
                    }
                    accumulate(&mut grads, *x, &shapes[x.0], dx);
                    accumulate(&mut grads, *gamma, &shapes[gamma.0], sum_dy_xhat);
                    accumulate(&mut grads, *beta, &shapes[beta.0], sum_dy);
                }
                Op::Concat { a, b, ca, cb } => {
                    let (ca, cb) = (*ca, *cb);
                    let rows = dy.len() / (ca + cb);
                    let mut da = Vec::with_capacity(rows * ca);
                    let mut db = Vec::with_capacity(rows * cb);
                    for row in dy.chunks_exact(ca + cb) {
                        da.extend_from_slice(&row[..ca]);
                        db.extend_from_slice(&row[ca..]);
                    }
                    accumulate(&mut grads, *a, &shapes[a.0], da);
                    accumulate(&mut grads, *b, &shapes[b.0], db);
                }
                Op::Reshape { x } => accumulate(&mut grads, *x, &shapes[x.0], dy.to_vec()),
                Op::Slice {
                    x,
                    start,
                    len,
                    width,
                } => {
                    let mut dx = vec![0.0; val(*x).len()];
                    for (row, g) in dx.chunks_exact_mut(*width).zip(dy.chunks_exact(*len)) {
                        row[*start..*start + *len].copy_from_slice(g);
                    }
                    accumulate(&mut grads, *x, &shapes[x.0], dx);
                }
                Op::Clamp { x, lo, hi } => {
                    let dx = val(*x)
                        .iter()
                        .zip(dy)
                        .map(|(&v, &g)| if v < *lo || v > *hi { 0.0 } else { g })
                        .collect();
                    accumulate(&mut grads, *x, &shapes[x.0], dx);
                }
                Op::Reparameterize {
                    mean,
                    log_var,
                    noise,
                } => {
                    let dlv = val(*log_var)
                        .iter()
                        .zip(noise)
                        .zip(dy)
                        .map(|((&l, &e), &g)| g * e * 0.5 * (0.5 * l).exp())
                        .collect();
                    accumulate(&mut grads, *mean, &shapes[mean.0], dy.to_vec());
                    accumulate(&mut grads, *log_var, &shapes[log_var.0], dlv);
                }
                Op::GaussianLogLik {
                    target,
                    mean,
                    log_var,
                    dims,
                } => {
                    let (m, lv) = (val(*mean), val(*log_var));
                    let mut dm = vec![0.0; m.len()];
                    let mut dlv = vec![0.0; m.len()];
                    for i in 0..m.len() {
                        let g = dy[i / dims];
                        let inv_var = (-lv[i]).exp();
                        let diff = target[i] - m[i];
                        dm[i] = g * diff * inv_var;
                        dlv[i] = g * (-0.5 + 0.5 * diff * diff * inv_var);
                    }
                    accumulate(&mut grads, *mean, &shapes[mean.0], dm);
                    accumulate(&mut grads, *log_var, &shapes[log_var.0], dlv);
                }
                Op::KlStdNormal {
                    mean,
                    log_var,
                    dims,
                } => {
                    let (m, lv) = (val(*mean), val(*log_var));
                    let dm = m
                        .iter()
                        .enumerate()
                        .map(|(i, &v)| dy[i / dims] * v)
                        .collect();
                    let dlv = lv
                        .iter()
                        .enumerate()
                        .map(|(i, &l)| dy[i / dims] * 0.5 * (l.exp() - 1.0))
                        .collect();
                    accumulate(&mut grads, *mean, &shapes[mean.0], dm);
                    accumulate(&mut grads, *log_var, &shapes[log_var.0], dlv);
                }
                Op::Add { a, b } => {
                    accumulate(&mut grads, *a, &shapes[a.0], dy.to_vec());
                    accumulate(&mut grads, *b, &shapes[b.0], dy.to_vec());
                }
                Op::Sub { a, b } => {
                    accumulate(&mut grads, *a, &shapes[a.0], dy.to_vec());
                    accumulate(
                        &mut grads,
                        *b,
                        &shapes[b.0],
                        dy.iter().map(|g| -g).collect(),
                    );
                }
                Op::Scale { x, c } => {
                    accumulate(
                        &mut grads,
                        *x,
                        &shapes[x.0],
                        dy.iter().map(|g| g * c).collect(),
                    );
                }
                Op::Mean { x } => {
                    let n = shapes[x.0].iter().product::<usize>();
                    accumulate(&mut grads, *x, &shapes[x.0], vec![dy[0] / n as f64; n]);
                }
            }
            // Leaves keep their gradient for the caller.
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(upstream);
            }
        }
        Ok(Gradients { grads, shapes })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::Padding;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dense_weight_gradient_is_input_per_row() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new([1, 3], vec![0.5, -1.0, 2.0]).unwrap());
        let w = tape.leaf(Tensor::from_fn([3, 2], |i| i as f64));
        let b = tape.leaf(Tensor::zeros([2]));
        let y = tape.dense(x, w, b).unwrap();
        let s = tape.mean(y);
        let loss = tape.scale(s, 2.0); // sum over the two outputs
        let g = tape.backward(loss).unwrap();
        let dw = g.get(w).unwrap();
        assert_eq!(dw.data(), [0.5, 0.5, -1.0, -1.0, 2.0, 2.0]);
        assert_eq!(g.get(b).unwrap().data(), [1.0, 1.0]);
    }

    #[test]
    fn constant_loss_has_zero_gradients() {
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::full([2, 2], 3.0));
        let c = tape.leaf(Tensor::scalar(4.0));
        let loss = tape.scale(c, 1.5);
        let g = tape.backward(loss).unwrap();
        assert!(g.get(w).is_none());
        assert!(g.get_or_zeros(w).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_requires_scalar_root() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros([3]));
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn kink_signature_tracks_relu_pattern() {
        let sig = |v: f64| {
            let mut tape = Tape::new();
            let x = tape.leaf(Tensor::new([2], vec![v, 1.0]).unwrap());
            tape.relu(x);
            tape.kink_signature()
        };
        assert_eq!(sig(0.5), sig(0.7));
        assert_ne!(sig(0.5), sig(-0.5));
    }

    #[test]
    fn concat_then_slice_gradients_route_back() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::from_fn([2, 1, 1, 2], |_| rng.random()));
        let b = tape.leaf(Tensor::from_fn([2, 1, 1, 3], |_| rng.random()));
        let cat = tape.concat_channels(a, b).unwrap();
        let flat = tape.reshape(cat, &[2, 5]).unwrap();
        let tail = tape.slice_columns(flat, 2, 3).unwrap();
        let loss = tape.mean(tail);
        let g = tape.backward(loss).unwrap();
        assert!(g.get(a).is_none_or(|t| t.data().iter().all(|&v| v == 0.0)));
        assert!(g
            .get(b)
            .unwrap()
            .data()
            .iter()
            .all(|&v| (v - 1.0 / 6.0).abs() < 1e-15));
    }

    #[test]
    fn conv_graph_runs() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::full([2, 4, 3, 1], 0.5));
        let spec = ConvSpec::new(2, 3, Padding::Same, false);
        let k = tape.leaf(Tensor::full([3, 3, 1, 2], 0.1));
        let b = tape.leaf(Tensor::zeros([2]));
        let y = tape.conv2d(x, &spec, k, b).unwrap();
        assert_eq!(tape.value(y).shape(), [2, 4, 3, 2]);
    }
}
