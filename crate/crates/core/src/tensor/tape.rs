//! Eager reverse-mode differentiation tape.
//!
//! Every operation evaluates immediately and appends a record holding its
//! inputs and the data its backward rule needs. [`Tape::backward`] sweeps the
//! records once in reverse order; gradients of inputs used by several
//! records accumulate additively.

use super::array::{split_axis, Tensor};
use super::gemm::gemm;
use crate::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Tanh,
    Relu,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Mean,
    Sum,
    /// Subgradient flows to the (first) arg-max.
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Binary(BinaryKind, Var, Var, Broadcast),
    Scale(Var, f64),
    Shift(Var),
    Activation(Activation, Var),
    Exp(Var),
    LogClamp(Var, f64),
    Softmax(Var, usize),
    Reduce(Reduction, Var, usize, Vec<usize>),
    SumAll(Var),
    Concat(Vec<Var>, usize),
    Reshape(Var),
    Slice(Var, usize, usize),
    Conv1d {
        x: Var,
        w: Var,
        b: Var,
        cols: Vec<f64>,
        rows: usize,
        steps: usize,
        cin: usize,
        k: usize,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    /// Saved r, z, n per row.
    GruCell {
        gi: Var,
        gh: Var,
        h: Var,
        gates: Vec<f64>,
    },
    /// Saved i, f, g, o, tanh(c) per row.
    LstmCell {
        gi: Var,
        gh: Var,
        state: Var,
        gates: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of executed operations.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Right-aligned broadcasting plan between two shapes.
#[derive(Debug, Clone)]
struct Broadcast {
    out: Vec<usize>,
    sa: Vec<usize>,
    sb: Vec<usize>,
    same: bool,
}

impl Broadcast {
    fn new(a: &[usize], b: &[usize]) -> Result<Self> {
        if a == b {
            let strides = contiguous_strides(a);
            return Ok(Self {
                out: a.to_vec(),
                sa: strides.clone(),
                sb: strides,
                same: true,
            });
        }
        let rank = a.len().max(b.len());
        let pad = |s: &[usize]| {
            let mut v = vec![1; rank - s.len()];
            v.extend_from_slice(s);
            v
        };
        let (pa, pb) = (pad(a), pad(b));
        let mut out = Vec::with_capacity(rank);
        for (&x, &y) in pa.iter().zip(&pb) {
            let d = match (x, y) {
                _ if x == y => x,
                (1, _) => y,
                (_, 1) => x,
                _ => {
                    return Err(Error::Dimension(format!(
                        "cannot broadcast shapes {a:?} and {b:?}"
                    )))
                }
            };
            out.push(d);
        }
        let strides_of = |p: &[usize]| {
            let mut s = contiguous_strides(p);
            for (i, st) in s.iter_mut().enumerate() {
                if p[i] == 1 && out[i] != 1 {
                    *st = 0;
                }
            }
            s
        };
        let (sa, sb) = (strides_of(&pa), strides_of(&pb));
        Ok(Self {
            out,
            sa,
            sb,
            same: false,
        })
    }

    fn map(&self, da: &[f64], db: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        if self.same {
            return da.iter().zip(db).map(|(&x, &y)| f(x, y)).collect();
        }
        let mut out = vec![0.0; self.out.iter().product()];
        self.visit(|o, i, j| out[o] = f(da[i], db[j]));
        out
    }

    /// Calls `f(out_index, a_index, b_index)` for every output element.
    fn visit(&self, mut f: impl FnMut(usize, usize, usize)) {
        let n: usize = self.out.iter().product();
        if self.same {
            for i in 0..n {
                f(i, i, i);
            }
            return;
        }
        let rank = self.out.len();
        let last = self.out[rank - 1];
        let (la, lb) = (self.sa[rank - 1], self.sb[rank - 1]);
        let mut idx = vec![0usize; rank];
        let mut o = 0;
        while o < n {
            let (mut ba, mut bb) = (0, 0);
            for d in 0..rank - 1 {
                ba += idx[d] * self.sa[d];
                bb += idx[d] * self.sb[d];
            }
            for j in 0..last {
                f(o + j, ba + j * la, bb + j * lb);
            }
            o += last;
            for d in (0..rank.saturating_sub(1)).rev() {
                idx[d] += 1;
                if idx[d] < self.out[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
    }
}

fn contiguous_strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

fn check_axis(shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(Error::Dimension(format!(
            "axis {axis} out of range for shape {shape:?}"
        )));
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last [`Tape::backward`] target with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Differentiable leaf.
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push_unchecked(value, Op::Leaf, true)
    }

    /// Non-differentiable leaf.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_unchecked(value, Op::Leaf, false)
    }

    fn push_unchecked(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite value produced by {}",
                op_name(&op)
            )));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push_unchecked(value, op, requires_grad))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Dimension(format!(
                "matmul of {sa:?} and {sb:?}"
            )));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            false,
            &mut out,
            false,
        );
        self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), &[a, b])
    }

    fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        let plan = Broadcast::new(self.shape(a), self.shape(b))?;
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let out = match kind {
            BinaryKind::Add => plan.map(da, db, |x, y| x + y),
            BinaryKind::Sub => plan.map(da, db, |x, y| x - y),
            BinaryKind::Mul => plan.map(da, db, |x, y| x * y),
            BinaryKind::Div => plan.map(da, db, |x, y| x / y),
        };
        let shape = plan.out.clone();
        self.push(
            Tensor::from_parts(shape, out),
            Op::Binary(kind, a, b, plan),
            &[a, b],
        )
    }

    /// Element-wise sum with broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Div, a, b)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let v = self.value(a).map(|x| x * c);
        self.push(v, Op::Scale(a, c), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let v = self.value(a).map(|x| x + c);
        self.push(v, Op::Shift(a), &[a])
    }

    pub fn activation(&mut self, a: Var, kind: Activation) -> Result<Var> {
        let v = self.value(a).map(|x| kind.apply(x));
        self.push(v, Op::Activation(kind, a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.activation(a, Activation::Sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.activation(a, Activation::Tanh)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.activation(a, Activation::Relu)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(f64::exp);
        self.push(v, Op::Exp(a), &[a])
    }

    /// `ln(max(x, floor))`; the gradient is zero where the clamp is active.
    pub fn log_clamp(&mut self, a: Var, floor: f64) -> Result<Var> {
        let v = self.value(a).map(|x| x.max(floor).ln());
        self.push(v, Op::LogClamp(a, floor), &[a])
    }

    /// Softmax along `axis`, shifted by the slice maximum.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        check_axis(self.shape(a), axis)?;
        let v = softmax_values(self.value(a), axis);
        self.push(v, Op::Softmax(a, axis), &[a])
    }

    /// Reduces `axis` away.
    pub fn reduce(&mut self, a: Var, kind: Reduction, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        check_axis(&shape, axis)?;
        let (outer, n, inner) = split_axis(&shape, axis);
        let data = self.value(a).data();
        let mut out = vec![0.0; outer * inner];
        let mut arg = Vec::new();
        if kind == Reduction::Max {
            arg = vec![0; outer * inner];
        }
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| data[(o * n + j) * inner + i];
                let slot = o * inner + i;
                out[slot] = match kind {
                    Reduction::Sum => (0..n).map(at).sum(),
                    Reduction::Mean => (0..n).map(at).sum::<f64>() / n as f64,
                    Reduction::Max => {
                        let mut best = 0;
                        for j in 1..n {
                            if at(j) > at(best) {
                                best = j;
                            }
                        }
                        arg[slot] = best;
                        at(best)
                    }
                };
            }
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        self.push(
            Tensor::from_parts(out_shape, out),
            Op::Reduce(kind, a, axis, arg),
            &[a],
        )
    }

    pub fn mean(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.reduce(a, Reduction::Mean, axis)
    }

    pub fn sum(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.reduce(a, Reduction::Sum, axis)
    }

    pub fn max(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.reduce(a, Reduction::Max, axis)
    }

    /// Sum of all elements as a one-element tensor.
    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(a), &[a])
    }

    pub fn mean_all(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).numel() as f64;
        let s = self.sum_all(a)?;
        self.scale(s, 1.0 / n)
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = xs
            .first()
            .ok_or_else(|| Error::Dimension("concat of zero tensors".into()))?;
        let base = self.shape(*first).to_vec();
        check_axis(&base, axis)?;
        let mut total = 0;
        for &x in xs {
            let s = self.shape(x);
            let ok = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (p, q))| i == axis || p == q);
            if !ok {
                return Err(Error::Dimension(format!(
                    "ragged concat: {s:?} against {base:?} on axis {axis}"
                )));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &x in xs {
                let n = self.shape(x)[axis];
                let d = self.value(x).data();
                out.extend_from_slice(&d[o * n * inner..(o + 1) * n * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        self.push(
            Tensor::from_parts(shape, out),
            Op::Concat(xs.to_vec(), axis),
            xs,
        )
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).clone().reshape(shape)?;
        self.push(v, Op::Reshape(a), &[a])
    }

    /// Collapses every axis into one.
    pub fn flatten(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).numel();
        self.reshape(a, &[n])
    }

    /// Keeps the leading (batch) axis and collapses the rest.
    pub fn flatten_batch(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        let b = s[0];
        let rest = s[1..].iter().product();
        self.reshape(a, &[b, rest])
    }

    /// `len` entries of `axis` starting at `start`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        check_axis(&shape, axis)?;
        if len == 0 || start + len > shape[axis] {
            return Err(Error::Dimension(format!(
                "slice {start}..{} out of range for axis {axis} of {shape:?}",
                start + len
            )));
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let d = self.value(a).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * n + start) * inner;
            out.extend_from_slice(&d[base..base + len * inner]);
        }
        let mut s = shape;
        s[axis] = len;
        self.push(Tensor::from_parts(s, out), Op::Slice(a, axis, start), &[a])
    }

    /// Stride-1 temporal convolution with zero padding `(k-1)/2` on both ends.
    ///
    /// `x` is `[T, C_in]` or `[B, T, C_in]`, `kernels` is `[C_out, C_in, k]`
    /// and `bias` is `[C_out]`; the output keeps the length `T`.
    pub fn conv1d_same(&mut self, x: Var, kernels: Var, bias: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(kernels).to_vec();
        let (batch, steps, cin) = match xs.as_slice() {
            [t, c] => (1, *t, *c),
            [b, t, c] => (*b, *t, *c),
            _ => return Err(Error::Dimension(format!("conv1d input {xs:?}"))),
        };
        let [cout, wcin, k] = ws[..] else {
            return Err(Error::Dimension(format!("conv1d kernels {ws:?}")));
        };
        if k % 2 == 0 {
            return Err(Error::Config(format!("conv1d kernel size {k} must be odd")));
        }
        if wcin != cin || self.shape(bias) != [cout] {
            return Err(Error::Dimension(format!(
                "conv1d input {xs:?}, kernels {ws:?}, bias {:?}",
                self.shape(bias)
            )));
        }
        let rows = batch * steps;
        let width = k * cin;
        let cols = im2col(self.value(x).data(), batch, steps, cin, k);
        let w2 = kernel_matrix(self.value(kernels).data(), cout, cin, k);
        let mut out = vec![0.0; rows * cout];
        gemm(rows, width, cout, &cols, false, &w2, false, &mut out, false);
        let bd = self.value(bias).data();
        for r in 0..rows {
            for (o, b) in out[r * cout..(r + 1) * cout].iter_mut().zip(bd) {
                *o += *b;
            }
        }
        let mut shape = xs;
        *shape.last_mut().unwrap() = cout;
        self.push(
            Tensor::from_parts(shape, out),
            Op::Conv1d {
                x,
                w: kernels,
                b: bias,
                cols,
                rows,
                steps,
                cin,
                k,
            },
            &[x, kernels, bias],
        )
    }

    /// Batch normalisation over the rows of `x` (`[N, F]`) using the batch
    /// statistics. Returns the output plus the batch mean and the unbiased
    /// batch variance per feature (for running-statistics updates).
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, Vec<f64>, Vec<f64>)> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(Error::Dimension(format!("batch_norm input {s:?}")));
        }
        let (n, f) = (s[0], s[1]);
        if n < 2 {
            return Err(Error::BatchSize(n));
        }
        if self.shape(gamma) != [f] || self.shape(beta) != [f] {
            return Err(Error::Dimension("batch_norm affine width".into()));
        }
        let d = self.value(x).data();
        let mut mean = vec![0.0; f];
        for r in 0..n {
            for (m, v) in mean.iter_mut().zip(&d[r * f..(r + 1) * f]) {
                *m += *v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; f];
        for r in 0..n {
            for j in 0..f {
                let c = d[r * f + j] - mean[j];
                var[j] += c * c;
            }
        }
        let biased: Vec<f64> = var.iter().map(|v| v / n as f64).collect();
        let unbiased: Vec<f64> = var.iter().map(|v| v / (n - 1) as f64).collect();
        let inv_std: Vec<f64> = biased.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![0.0; n * f];
        let mut out = vec![0.0; n * f];
        for r in 0..n {
            for j in 0..f {
                let h = (d[r * f + j] - mean[j]) * inv_std[j];
                xhat[r * f + j] = h;
                out[r * f + j] = g[j] * h + b[j];
            }
        }
        let y = self.push(
            Tensor::from_parts(s, out),
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            &[x, gamma, beta],
        )?;
        Ok((y, mean, unbiased))
    }

    /// Normalises the last axis, then applies `gain` and `bias` (`[D]`).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let dim = *s.last().unwrap();
        if self.shape(gain) != [dim] || self.shape(bias) != [dim] {
            return Err(Error::Dimension("layer_norm affine width".into()));
        }
        let rows = self.value(x).numel() / dim;
        let d = self.value(x).data();
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let mut xhat = vec![0.0; rows * dim];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; rows * dim];
        for r in 0..rows {
            let row = &d[r * dim..(r + 1) * dim];
            let mean = row.iter().sum::<f64>() / dim as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / dim as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..dim {
                let h = (row[j] - mean) * is;
                xhat[r * dim + j] = h;
                out[r * dim + j] = g[j] * h + b[j];
            }
        }
        self.push(
            Tensor::from_parts(s, out),
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            &[x, gain, bias],
        )
    }

    /// GRU state update from gate pre-activations `gi` (input side) and `gh`
    /// (hidden side), both `[B, 3H]` in r, z, n order, and the state `[B, H]`:
    /// `h' = n + z·(h − n)` with `n = tanh(gi_n + r·gh_n)`.
    pub fn gru_cell(&mut self, gi: Var, gh: Var, h: Var) -> Result<Var> {
        let (batch, hidden) = match self.shape(h) {
            [b, n] => (*b, *n),
            s => return Err(Error::Dimension(format!("gru state {s:?}"))),
        };
        let want = [batch, 3 * hidden];
        if self.shape(gi) != want || self.shape(gh) != want {
            return Err(Error::Dimension(format!(
                "gru gates {:?} and {:?} for state {:?}",
                self.shape(gi),
                self.shape(gh),
                [batch, hidden]
            )));
        }
        let (xi, xh, hp) = (self.value(gi).data(), self.value(gh).data(), self.value(h).data());
        let mut gates = vec![0.0; 3 * batch * hidden];
        let mut out = vec![0.0; batch * hidden];
        for b in 0..batch {
            let (gi, gh) = (&xi[b * 3 * hidden..], &xh[b * 3 * hidden..]);
            let saved = &mut gates[b * 3 * hidden..(b + 1) * 3 * hidden];
            for j in 0..hidden {
                let r = sigmoid(gi[j] + gh[j]);
                let z = sigmoid(gi[hidden + j] + gh[hidden + j]);
                let n = (gi[2 * hidden + j] + r * gh[2 * hidden + j]).tanh();
                saved[j] = r;
                saved[hidden + j] = z;
                saved[2 * hidden + j] = n;
                out[b * hidden + j] = n + z * (hp[b * hidden + j] - n);
            }
        }
        self.push(
            Tensor::from_parts(vec![batch, hidden], out),
            Op::GruCell { gi, gh, h, gates },
            &[gi, gh, h],
        )
    }

    /// LSTM update from gate pre-activations `gi`, `gh` (`[B, 4H]`, i, f, g, o
    /// order) and the packed state `[B, 2H]` holding `h | c`; returns the next
    /// packed state with `c' = f·c + i·g` and `h' = o·tanh(c')`. Only the `c`
    /// half of `state` is read.
    pub fn lstm_cell(&mut self, gi: Var, gh: Var, state: Var) -> Result<Var> {
        let (batch, hidden) = match self.shape(state) {
            [b, n] if n % 2 == 0 => (*b, *n / 2),
            s => return Err(Error::Dimension(format!("lstm state {s:?}"))),
        };
        let want = [batch, 4 * hidden];
        if self.shape(gi) != want || self.shape(gh) != want {
            return Err(Error::Dimension(format!(
                "lstm gates {:?} and {:?} for hidden width {hidden}",
                self.shape(gi),
                self.shape(gh)
            )));
        }
        let (xi, xh, st) = (self.value(gi).data(), self.value(gh).data(), self.value(state).data());
        let mut gates = vec![0.0; 5 * batch * hidden];
        let mut out = vec![0.0; 2 * batch * hidden];
        for b in 0..batch {
            let (gi, gh) = (&xi[b * 4 * hidden..], &xh[b * 4 * hidden..]);
            let saved = &mut gates[b * 5 * hidden..(b + 1) * 5 * hidden];
            let row = &mut out[b * 2 * hidden..(b + 1) * 2 * hidden];
            for j in 0..hidden {
                let i = sigmoid(gi[j] + gh[j]);
                let f = sigmoid(gi[hidden + j] + gh[hidden + j]);
                let g = (gi[2 * hidden + j] + gh[2 * hidden + j]).tanh();
                let o = sigmoid(gi[3 * hidden + j] + gh[3 * hidden + j]);
                let c = f * st[(2 * b + 1) * hidden + j] + i * g;
                let tc = c.tanh();
                saved[j] = i;
                saved[hidden + j] = f;
                saved[2 * hidden + j] = g;
                saved[3 * hidden + j] = o;
                saved[4 * hidden + j] = tc;
                row[j] = o * tc;
                row[hidden + j] = c;
            }
        }
        self.push(
            Tensor::from_parts(vec![batch, 2 * hidden], out),
            Op::LstmCell { gi, gh, state, gates },
            &[gi, gh, state],
        )
    }

    /// Reverse sweep from a one-element `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(Tensor::ones(self.shape(loss)));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.backprop_node(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn backprop_node(&mut self, i: usize, g: &Tensor) {
        let gd = g.data();
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        let (nodes, grads) = (&self.nodes, &mut self.grads);
        match &op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (nodes[a.0].value.shape()[0], nodes[a.0].value.shape()[1]);
                let n = nodes[b.0].value.shape()[1];
                if nodes[a.0].requires_grad {
                    let bv = nodes[b.0].value.data();
                    accumulate(nodes, grads, *a, |ga| gemm(m, n, k, gd, false, bv, true, ga, true));
                }
                if nodes[b.0].requires_grad {
                    let av = nodes[a.0].value.data();
                    accumulate(nodes, grads, *b, |gb| gemm(k, m, n, av, true, gd, false, gb, true));
                }
            }
            Op::Binary(kind, a, b, plan) => {
                let (a, b) = (*a, *b);
                let (av, bv) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                if nodes[a.0].requires_grad {
                    accumulate(nodes, grads, a, |ga| match kind {
                        BinaryKind::Add | BinaryKind::Sub => plan.visit(|o, x, _| ga[x] += gd[o]),
                        BinaryKind::Mul => plan.visit(|o, x, y| ga[x] += gd[o] * bv[y]),
                        BinaryKind::Div => plan.visit(|o, x, y| ga[x] += gd[o] / bv[y]),
                    });
                }
                if nodes[b.0].requires_grad {
                    accumulate(nodes, grads, b, |gb| match kind {
                        BinaryKind::Add => plan.visit(|o, _, y| gb[y] += gd[o]),
                        BinaryKind::Sub => plan.visit(|o, _, y| gb[y] += -gd[o]),
                        BinaryKind::Mul => plan.visit(|o, x, y| gb[y] += gd[o] * av[x]),
                        BinaryKind::Div => plan.visit(|o, x, y| gb[y] += -gd[o] * av[x] / (bv[y] * bv[y])),
                    });
                }
            }
            Op::Scale(a, c) => accumulate(nodes, grads, *a, |ga| {
                ga.iter_mut().zip(gd).for_each(|(d, g)| *d += g * c)
            }),
            Op::Shift(a) => accumulate(nodes, grads, *a, |ga| {
                ga.iter_mut().zip(gd).for_each(|(d, g)| *d += g)
            }),
            Op::Activation(kind, a) => {
                let y = nodes[i].value.data();
                let x = nodes[a.0].value.data();
                accumulate(nodes, grads, *a, |ga| {
                    for j in 0..ga.len() {
                        let dy = match kind {
                            Activation::Sigmoid => y[j] * (1.0 - y[j]),
                            Activation::Tanh => 1.0 - y[j] * y[j],
                            Activation::Relu => {
                                if x[j] > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                        };
                        ga[j] += gd[j] * dy;
                    }
                })
            }
            Op::Exp(a) => {
                let y = nodes[i].value.data();
                accumulate(nodes, grads, *a, |ga| {
                    for j in 0..ga.len() {
                        ga[j] += gd[j] * y[j];
                    }
                })
            }
            Op::LogClamp(a, floor) => {
                let x = nodes[a.0].value.data();
                accumulate(nodes, grads, *a, |ga| {
                    for j in 0..ga.len() {
                        if x[j] > *floor {
                            ga[j] += gd[j] / x[j];
                        }
                    }
                })
            }
            Op::Softmax(a, axis) => {
                let y = nodes[i].value.data();
                let (outer, n, inner) = split_axis(nodes[i].value.shape(), *axis);
                accumulate(nodes, grads, *a, |ga| {
                    for o in 0..outer {
                        for q in 0..inner {
                            let at = |j: usize| (o * n + j) * inner + q;
                            let dot: f64 = (0..n).map(|j| gd[at(j)] * y[at(j)]).sum();
                            for j in 0..n {
                                ga[at(j)] += y[at(j)] * (gd[at(j)] - dot);
                            }
                        }
                    }
                })
            }
            Op::Reduce(kind, a, axis, arg) => {
                let shape = nodes[a.0].value.shape().to_vec();
                let (outer, n, inner) = split_axis(&shape, *axis);
                accumulate(nodes, grads, *a, |ga| {
                    for o in 0..outer {
                        for q in 0..inner {
                            let g = gd[o * inner + q];
                            match kind {
                                Reduction::Sum => {
                                    for j in 0..n {
                                        ga[(o * n + j) * inner + q] += g;
                                    }
                                }
                                Reduction::Mean => {
                                    for j in 0..n {
                                        ga[(o * n + j) * inner + q] += g / n as f64;
                                    }
                                }
                                Reduction::Max => {
                                    ga[(o * n + arg[o * inner + q]) * inner + q] += g;
                                }
                            }
                        }
                    }
                })
            }
            Op::SumAll(a) => accumulate(nodes, grads, *a, |ga| ga.iter_mut().for_each(|d| *d += gd[0])),
            Op::Concat(xs, axis) => {
                let out_shape = nodes[i].value.shape().to_vec();
                let (outer, total, inner) = split_axis(&out_shape, *axis);
                let mut offset = 0;
                for &x in xs {
                    let n = nodes[x.0].value.shape()[*axis];
                    accumulate(nodes, grads, x, |gx| {
                        for o in 0..outer {
                            let src = (o * total + offset) * inner;
                            let dst = o * n * inner;
                            for j in 0..n * inner {
                                gx[dst + j] += gd[src + j];
                            }
                        }
                    });
                    offset += n;
                }
            }
            Op::Reshape(a) => accumulate(nodes, grads, *a, |ga| {
                ga.iter_mut().zip(gd).for_each(|(d, g)| *d += g)
            }),
            Op::Slice(a, axis, start) => {
                let shape = nodes[a.0].value.shape().to_vec();
                let (outer, n, inner) = split_axis(&shape, *axis);
                let len = nodes[i].value.shape()[*axis];
                accumulate(nodes, grads, *a, |ga| {
                    for o in 0..outer {
                        let dst = (o * n + start) * inner;
                        let src = o * len * inner;
                        for j in 0..len * inner {
                            ga[dst + j] += gd[src + j];
                        }
                    }
                })
            }
            Op::Conv1d {
                x,
                w,
                b,
                cols,
                rows,
                steps,
                cin,
                k,
            } => {
                let (rows, steps, cin, k) = (*rows, *steps, *cin, *k);
                let cout = nodes[w.0].value.shape()[0];
                let width = k * cin;
                if nodes[w.0].requires_grad {
                    let mut gw2 = vec![0.0; width * cout];
                    gemm(width, rows, cout, cols, true, gd, false, &mut gw2, false);
                    accumulate(nodes, grads, *w, |gw| {
                        for j in 0..k {
                            for c in 0..cin {
                                for o in 0..cout {
                                    gw[(o * cin + c) * k + j] += gw2[(j * cin + c) * cout + o];
                                }
                            }
                        }
                    });
                }
                if nodes[b.0].requires_grad {
                    accumulate(nodes, grads, *b, |gb| {
                        for r in 0..rows {
                            for o in 0..cout {
                                gb[o] += gd[r * cout + o];
                            }
                        }
                    });
                }
                if nodes[x.0].requires_grad {
                    let w2 = kernel_matrix(nodes[w.0].value.data(), cout, cin, k);
                    let mut gcols = vec![0.0; rows * width];
                    gemm(rows, cout, width, gd, false, &w2, true, &mut gcols, false);
                    let pad = (k - 1) / 2;
                    accumulate(nodes, grads, *x, |gx| {
                        for r in 0..rows {
                            let (bi, t) = (r / steps, r % steps);
                            for j in 0..k {
                                let src = t as isize + j as isize - pad as isize;
                                if src < 0 || src >= steps as isize {
                                    continue;
                                }
                                let dst = (bi * steps + src as usize) * cin;
                                let from = r * width + j * cin;
                                for c in 0..cin {
                                    gx[dst + c] += gcols[from + c];
                                }
                            }
                        }
                    });
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let f = inv_std.len();
                let n = xhat.len() / f;
                let mut sum_g = vec![0.0; f];
                let mut sum_gx = vec![0.0; f];
                for r in 0..n {
                    for j in 0..f {
                        sum_g[j] += gd[r * f + j];
                        sum_gx[j] += gd[r * f + j] * xhat[r * f + j];
                    }
                }
                accumulate(nodes, grads, *beta, |gb| {
                    gb.iter_mut().zip(&sum_g).for_each(|(d, s)| *d += s)
                });
                accumulate(nodes, grads, *gamma, |gg| {
                    gg.iter_mut().zip(&sum_gx).for_each(|(d, s)| *d += s)
                });
                if nodes[x.0].requires_grad {
                    let gam = nodes[gamma.0].value.data();
                    let nf = n as f64;
                    accumulate(nodes, grads, *x, |gx| {
                        for r in 0..n {
                            for j in 0..f {
                                let idx = r * f + j;
                                gx[idx] += gam[j] * inv_std[j] / nf
                                    * (nf * gd[idx] - sum_g[j] - xhat[idx] * sum_gx[j]);
                            }
                        }
                    });
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let rows = inv_std.len();
                let dim = xhat.len() / rows;
                accumulate(nodes, grads, *bias, |gb| {
                    for r in 0..rows {
                        for j in 0..dim {
                            gb[j] += gd[r * dim + j];
                        }
                    }
                });
                accumulate(nodes, grads, *gain, |gg| {
                    for r in 0..rows {
                        for j in 0..dim {
                            gg[j] += gd[r * dim + j] * xhat[r * dim + j];
                        }
                    }
                });
                if nodes[x.0].requires_grad {
                    let gn = nodes[gain.0].value.data();
                    let df = dim as f64;
                    accumulate(nodes, grads, *x, |gx| {
                        for r in 0..rows {
                            let base = r * dim;
                            let mut s1 = 0.0;
                            let mut s2 = 0.0;
                            for j in 0..dim {
                                let gh = gd[base + j] * gn[j];
                                s1 += gh;
                                s2 += gh * xhat[base + j];
                            }
                            for j in 0..dim {
                                let gh = gd[base + j] * gn[j];
                                gx[base + j] +=
                                    inv_std[r] / df * (df * gh - s1 - xhat[base + j] * s2);
                            }
                        }
                    });
                }
            }
            Op::GruCell { gi, gh, h, gates } => {
                let hidden = nodes[h.0].value.shape()[1];
                let batch = gd.len() / hidden;
                let xh = nodes[gh.0].value.data();
                let hp = nodes[h.0].value.data();
                let mut dpre = vec![0.0; 3 * batch * hidden];
                let mut dn_h = vec![0.0; 3 * batch * hidden];
                for b in 0..batch {
                    let saved = &gates[b * 3 * hidden..];
                    let base = b * 3 * hidden;
                    for j in 0..hidden {
                        let (r, z, n) = (saved[j], saved[hidden + j], saved[2 * hidden + j]);
                        let g = gd[b * hidden + j];
                        let dn = g * (1.0 - z) * (1.0 - n * n);
                        let dz = g * (hp[b * hidden + j] - n) * z * (1.0 - z);
                        let dr = dn * xh[base + 2 * hidden + j] * r * (1.0 - r);
                        dpre[base + j] = dr;
                        dpre[base + hidden + j] = dz;
                        dpre[base + 2 * hidden + j] = dn;
                        dn_h[base + j] = dr;
                        dn_h[base + hidden + j] = dz;
                        dn_h[base + 2 * hidden + j] = dn * r;
                    }
                }
                accumulate(nodes, grads, *gi, |d| d.iter_mut().zip(&dpre).for_each(|(d, g)| *d += g));
                accumulate(nodes, grads, *gh, |d| d.iter_mut().zip(&dn_h).for_each(|(d, g)| *d += g));
                accumulate(nodes, grads, *h, |d| {
                    for b in 0..batch {
                        for j in 0..hidden {
                            d[b * hidden + j] += gd[b * hidden + j] * gates[b * 3 * hidden + hidden + j];
                        }
                    }
                });
            }
            Op::LstmCell { gi, gh, state, gates } => {
                let hidden = nodes[state.0].value.shape()[1] / 2;
                let batch = gd.len() / (2 * hidden);
                let st = nodes[state.0].value.data();
                let mut dpre = vec![0.0; 4 * batch * hidden];
                let mut dstate = vec![0.0; 2 * batch * hidden];
                for b in 0..batch {
                    let saved = &gates[b * 5 * hidden..];
                    for j in 0..hidden {
                        let (i, f, g, o, tc) = (
                            saved[j],
                            saved[hidden + j],
                            saved[2 * hidden + j],
                            saved[3 * hidden + j],
                            saved[4 * hidden + j],
                        );
                        let dh = gd[2 * b * hidden + j];
                        let dc = gd[(2 * b + 1) * hidden + j] + dh * o * (1.0 - tc * tc);
                        let base = b * 4 * hidden;
                        dpre[base + j] = dc * g * i * (1.0 - i);
                        dpre[base + hidden + j] = dc * st[(2 * b + 1) * hidden + j] * f * (1.0 - f);
                        dpre[base + 2 * hidden + j] = dc * i * (1.0 - g * g);
                        dpre[base + 3 * hidden + j] = dh * tc * o * (1.0 - o);
                        dstate[(2 * b + 1) * hidden + j] = dc * f;
                    }
                }
                accumulate(nodes, grads, *gi, |d| d.iter_mut().zip(&dpre).for_each(|(d, g)| *d += g));
                accumulate(nodes, grads, *gh, |d| d.iter_mut().zip(&dpre).for_each(|(d, g)| *d += g));
                accumulate(nodes, grads, *state, |d| d.iter_mut().zip(&dstate).for_each(|(d, g)| *d += g));
            }
        }

        self.nodes[i].op = op;
    }
}

fn accumulate(nodes: &[Node], grads: &mut [Option<Tensor>], v: Var, f: impl FnOnce(&mut [f64])) {
    if !nodes[v.0].requires_grad {
        return;
    }
    let slot = grads[v.0].get_or_insert_with(|| Tensor::zeros(nodes[v.0].value.shape()));
    f(slot.data_mut());
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::MatMul(..) => "matmul",
        Op::Binary(..) => "element-wise binary op",
        Op::Scale(..) => "scale",
        Op::Shift(..) => "add_scalar",
        Op::Activation(..) => "activation",
        Op::Exp(..) => "exp",
        Op::LogClamp(..) => "log",
        Op::Softmax(..) => "softmax",
        Op::Reduce(..) => "reduce",
        Op::SumAll(..) => "sum",
        Op::Concat(..) => "concat",
        Op::Reshape(..) => "reshape",
        Op::Slice(..) => "slice",
        Op::Conv1d { .. } => "conv1d",
        Op::BatchNorm { .. } => "batch_norm",
        Op::LayerNorm { .. } => "layer_norm",
        Op::GruCell { .. } => "gru_cell",
        Op::LstmCell { .. } => "lstm_cell",
    }
}

/// Numerically stable softmax of a detached tensor along `axis`.
pub fn softmax_values(x: &Tensor, axis: usize) -> Tensor {
    let (outer, n, inner) = split_axis(x.shape(), axis);
    let d = x.data();
    let mut out = vec![0.0; d.len()];
    for o in 0..outer {
        for q in 0..inner {
            let at = |j: usize| (o * n + j) * inner + q;
            let m = (0..n).map(|j| d[at(j)]).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for j in 0..n {
                let e = (d[at(j)] - m).exp();
                out[at(j)] = e;
                z += e;
            }
            for j in 0..n {
                out[at(j)] /= z;
            }
        }
    }
    Tensor::from_parts(x.shape().to_vec(), out)
}

/// Rows are (sample, time), columns are (tap, channel).
fn im2col(x: &[f64], batch: usize, steps: usize, cin: usize, k: usize) -> Vec<f64> {
    let pad = (k - 1) / 2;
    let width = k * cin;
    let mut cols = vec![0.0; batch * steps * width];
    for b in 0..batch {
        for t in 0..steps {
            let row = (b * steps + t) * width;
            for j in 0..k {
                let src = t as isize + j as isize - pad as isize;
                if src < 0 || src >= steps as isize {
                    continue;
                }
                let from = (b * steps + src as usize) * cin;
                cols[row + j * cin..row + (j + 1) * cin].copy_from_slice(&x[from..from + cin]);
            }
        }
    }
    cols
}

/// `[C_out, C_in, k]` kernels laid out as a `(k·C_in) × C_out` matrix.
fn kernel_matrix(w: &[f64], cout: usize, cin: usize, k: usize) -> Vec<f64> {
    let mut m = vec![0.0; k * cin * cout];
    for o in 0..cout {
        for c in 0..cin {
            for j in 0..k {
                m[(j * cin + c) * cout + o] = w[(o * cin + c) * k + j];
            }
        }
    }
    m
}
