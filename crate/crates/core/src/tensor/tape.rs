//! Reverse-mode automatic differentiation over a linear record of operations.
//!
//! Every operation appends one node holding its output value and whatever the
//! adjoint needs. `backward` walks the nodes in reverse creation order, which is
//! a valid reverse topological order because inputs always precede outputs.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::gemm::gemm;
use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Contiguous run of rows that attend only to each other (one packed sequence).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Segment {
    pub start: usize,
    pub len: usize,
}

enum Op {
    Constant,
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    MulConst(Var, Vec<f64>),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Softmax {
        x: Var,
        axis: usize,
    },
    LogSoftmax(Var),
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    SelectRows {
        x: Var,
        rows: Vec<usize>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        segments: Vec<Segment>,
        heads: usize,
        probs: Vec<f64>,
    },
    Pick {
        x: Var,
        cols: Vec<usize>,
    },
    RowDot {
        x: Var,
        weights: Vec<f64>,
    },
    Sum(Var),
    Mean(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Adjoints produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
    visited: usize,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`, or `None` when the loss
    /// does not depend on it.
    pub fn get(&self, var: Var) -> Option<Tensor> {
        self.grads[var.0]
            .as_ref()
            .map(|g| Tensor::from_parts(self.shapes[var.0].clone(), g.clone()))
    }

    /// Number of recorded operations whose adjoint was replayed.
    pub fn visited(&self) -> usize {
        self.visited
    }
}

/// Operation record for one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    dropout_rng: Option<ChaCha8Rng>,
}

fn check_finite(op: &'static str, t: &Tensor) -> Result<()> {
    if t.all_finite() {
        Ok(())
    } else {
        Err(Error::NumericDomain(op.to_string()))
    }
}

fn gelu_parts(x: f64) -> (f64, f64) {
    const S: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    const C: f64 = 0.044_715;
    let u = S * (x + C * x * x * x);
    let t = u.tanh();
    let y = 0.5 * x * (1.0 + t);
    let dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * S * (1.0 + 3.0 * C * x * x);
    (y, dy)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// A tape whose `dropout` calls sample masks from a seeded stream.
    /// Without this, `dropout` is the identity.
    pub fn with_dropout(seed: u64) -> Self {
        Tape {
            nodes: Vec::new(),
            dropout_rng: Some(ChaCha8Rng::seed_from_u64(seed)),
        }
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

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Value that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Constant, false)
    }

    /// Free leaf that receives a gradient (used for gradient checks).
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input, true)
    }

    /// Leaf bound to a stored parameter; `backward_into` routes its adjoint
    /// back to the store.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id), true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(Error::shape("matmul", ta.shape(), tb.shape()));
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, ta.data(), false, tb.data(), false, &mut out, 0.0);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape("add", ta.shape(), tb.shape()));
        }
        let out: Vec<f64> = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| x + y)
            .collect();
        let shape = ta.shape().to_vec();
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape("mul", ta.shape(), tb.shape()));
        }
        let out: Vec<f64> = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| x * y)
            .collect();
        let shape = ta.shape().to_vec();
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Mul(a, b), rg))
    }

    /// `x[r, :] + bias` for every row `r`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let cols = tx.cols();
        if tb.numel() != cols {
            return Err(Error::shape("add_row", tx.shape(), tb.shape()));
        }
        let mut out = tx.data().to_vec();
        for row in out.chunks_mut(cols) {
            for (o, b) in row.iter_mut().zip(tb.data()) {
                *o += b;
            }
        }
        let shape = tx.shape().to_vec();
        let rg = self.rg(&[x, bias]);
        Ok(self.push(Tensor::from_parts(shape, out), Op::AddRow(x, bias), rg))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let t = self.value(x);
        let out = t.data().iter().map(|v| v * c).collect();
        let shape = t.shape().to_vec();
        let rg = self.rg(&[x]);
        self.push(Tensor::from_parts(shape, out), Op::Scale(x, c), rg)
    }

    pub fn add_const(&mut self, x: Var, c: &Tensor) -> Result<Var> {
        let t = self.value(x);
        if t.shape() != c.shape() {
            return Err(Error::shape("add_const", t.shape(), c.shape()));
        }
        let out = t.data().iter().zip(c.data()).map(|(a, b)| a + b).collect();
        let shape = t.shape().to_vec();
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::from_parts(shape, out), Op::AddConst(x), rg))
    }

    pub fn mul_const(&mut self, x: Var, c: &Tensor) -> Result<Var> {
        let t = self.value(x);
        if t.shape() != c.shape() {
            return Err(Error::shape("mul_const", t.shape(), c.shape()));
        }
        let out = t.data().iter().zip(c.data()).map(|(a, b)| a * b).collect();
        let shape = t.shape().to_vec();
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::MulConst(x, c.data().to_vec()),
            rg,
        ))
    }

    /// Inverted dropout. Identity unless the tape was built with
    /// [`Tape::with_dropout`] and `rate > 0`.
    pub fn dropout(&mut self, x: Var, rate: f64) -> Result<Var> {
        if rate <= 0.0 {
            return Ok(x);
        }
        if rate >= 1.0 {
            return Err(Error::Config(format!("dropout rate {rate} must be < 1")));
        }
        let Some(rng) = self.dropout_rng.as_mut() else {
            return Ok(x);
        };
        let shape = self.nodes[x.0].value.shape().to_vec();
        let n: usize = shape.iter().product();
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect();
        self.mul_const(x, &Tensor::from_parts(shape, mask))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let out = t.data().iter().map(|&v| gelu_parts(v).0).collect();
        let shape = t.shape().to_vec();
        let rg = self.rg(&[x]);
        self.push(Tensor::from_parts(shape, out), Op::Gelu(x), rg)
    }

    /// Per-row normalization over the last axis (population variance), then
    /// `gain ⊙ x̂ + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (tx, tg, tb) = (self.value(x), self.value(gain), self.value(bias));
        let cols = tx.cols();
        if tg.numel() != cols || tb.numel() != cols {
            return Err(Error::shape("layer_norm", tx.shape(), tg.shape()));
        }
        if eps < 0.0 {
            return Err(Error::Config("layer_norm eps must be nonnegative".into()));
        }
        let rows = tx.rows();
        let n = cols as f64;
        let mut xhat = vec![0.0; tx.numel()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; tx.numel()];
        for r in 0..rows {
            let row = tx.row(r);
            let mut mean = row.iter().sum::<f64>() / n;
            // second pass removes the rounding left by the first
            mean += row.iter().map(|v| v - mean).sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for c in 0..cols {
                let h = (row[c] - mean) * rs;
                xhat[r * cols + c] = h;
                out[r * cols + c] = tg.data()[c] * h + tb.data()[c];
            }
        }
        let shape = tx.shape().to_vec();
        let rg = self.rg(&[x, gain, bias]);
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.value(x);
        check_finite("softmax", t)?;
        let shape = t.shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::Contract(format!(
                "softmax axis {axis} out of range for {shape:?}"
            )));
        }
        let n = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let src = t.data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * n + j) * inner + i;
                let max = (0..n)
                    .map(|j| src[idx(j)])
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for j in 0..n {
                    let e = (src[idx(j)] - max).exp();
                    out[idx(j)] = e;
                    z += e;
                }
                for j in 0..n {
                    out[idx(j)] /= z;
                }
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Softmax { x, axis }, rg))
    }

    /// Log-softmax along the last axis.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        check_finite("log_softmax", t)?;
        let cols = t.cols();
        let mut out = t.data().to_vec();
        for row in out.chunks_mut(cols) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        let shape = t.shape().to_vec();
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::from_parts(shape, out), Op::LogSoftmax(x), rg))
    }

    /// Rows of `table` selected by `ids` (embedding lookup).
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        if t.shape().len() != 2 {
            return Err(Error::shape("gather", t.shape(), &[ids.len()]));
        }
        let (v, d) = (t.shape()[0], t.shape()[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::Contract(format!(
                "index {bad} out of range for {v} rows"
            )));
        }
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(t.row(i));
        }
        let rg = self.rg(&[table]);
        Ok(self.push(
            Tensor::from_parts(vec![ids.len(), d], out),
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Rows of an activation matrix, e.g. the first position of each sequence.
    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let t = self.value(x);
        let (m, d) = (t.rows(), t.cols());
        if let Some(&bad) = rows.iter().find(|&&r| r >= m) {
            return Err(Error::Contract(format!(
                "row {bad} out of range for {m} rows"
            )));
        }
        let mut out = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            out.extend_from_slice(t.row(r));
        }
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor::from_parts(vec![rows.len(), d], out),
            Op::SelectRows {
                x,
                rows: rows.to_vec(),
            },
            rg,
        ))
    }

    /// Multi-head scaled dot-product self-attention where rows attend only
    /// within their own segment. `q`, `k`, `v` are `[T, d]`; segments must
    /// tile `0..T` in order.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        segments: &[Segment],
        heads: usize,
    ) -> Result<Var> {
        let (tq, tk, tv) = (self.value(q), self.value(k), self.value(v));
        if tq.shape() != tk.shape() || tq.shape() != tv.shape() || tq.shape().len() != 2 {
            return Err(Error::shape("attention", tq.shape(), tk.shape()));
        }
        let (rows, d) = (tq.shape()[0], tq.shape()[1]);
        if heads == 0 || d % heads != 0 {
            return Err(Error::Config(format!(
                "width {d} not divisible by {heads} attention heads"
            )));
        }
        let mut next = 0;
        for s in segments {
            if s.start != next || s.len == 0 {
                return Err(Error::Contract("segments must tile the rows".into()));
            }
            next += s.len;
        }
        if next != rows {
            return Err(Error::Contract("segments must tile the rows".into()));
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qd, kd, vd) = (tq.data(), tk.data(), tv.data());
        let total: usize = segments.iter().map(|s| s.len * s.len).sum::<usize>() * heads;
        let mut probs = Vec::with_capacity(total);
        let mut out = vec![0.0; rows * d];
        let mut scores = Vec::new();
        for s in segments {
            let l = s.len;
            for h in 0..heads {
                let off = h * dh;
                scores.clear();
                scores.resize(l * l, 0.0);
                for i in 0..l {
                    let qi = &qd[(s.start + i) * d + off..][..dh];
                    for j in 0..l {
                        let kj = &kd[(s.start + j) * d + off..][..dh];
                        scores[i * l + j] =
                            qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
                    }
                    let row = &mut scores[i * l..(i + 1) * l];
                    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let mut z = 0.0;
                    for x in row.iter_mut() {
                        *x = (*x - max).exp();
                        z += *x;
                    }
                    for x in row.iter_mut() {
                        *x /= z;
                    }
                    let oi = &mut out[(s.start + i) * d + off..][..dh];
                    for j in 0..l {
                        let p = row[j];
                        let vj = &vd[(s.start + j) * d + off..][..dh];
                        for (o, x) in oi.iter_mut().zip(vj) {
                            *o += p * x;
                        }
                    }
                }
                probs.extend_from_slice(&scores);
            }
        }
        let rg = self.rg(&[q, k, v]);
        Ok(self.push(
            Tensor::from_parts(vec![rows, d], out),
            Op::Attention {
                q,
                k,
                v,
                segments: segments.to_vec(),
                heads,
                probs,
            },
            rg,
        ))
    }

    /// `out[r] = x[r, cols[r]]`.
    pub fn pick(&mut self, x: Var, cols: &[usize]) -> Result<Var> {
        let t = self.value(x);
        let (m, c) = (t.rows(), t.cols());
        if cols.len() != m || cols.iter().any(|&j| j >= c) {
            return Err(Error::shape("pick", t.shape(), &[cols.len()]));
        }
        let out = cols
            .iter()
            .enumerate()
            .map(|(r, &j)| t.data()[r * c + j])
            .collect();
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor::from_parts(vec![m], out),
            Op::Pick {
                x,
                cols: cols.to_vec(),
            },
            rg,
        ))
    }

    /// `out[r] = Σ_j x[r, j] · w[r, j]` against constant weights.
    pub fn row_dot(&mut self, x: Var, w: &Tensor) -> Result<Var> {
        let t = self.value(x);
        if t.shape() != w.shape() {
            return Err(Error::shape("row_dot", t.shape(), w.shape()));
        }
        let m = t.rows();
        let out = (0..m)
            .map(|r| t.row(r).iter().zip(w.row(r)).map(|(a, b)| a * b).sum())
            .collect();
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor::from_parts(vec![m], out),
            Op::RowDot {
                x,
                weights: w.data().to_vec(),
            },
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Mean(x), rg)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        let mut visited = 0;
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            visited += 1;
            self.replay(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let shapes = self
            .nodes
            .iter()
            .map(|n| n.value.shape().to_vec())
            .collect();
        Ok(Gradients {
            grads,
            shapes,
            visited,
        })
    }

    /// Backward pass that zeroes `store`'s gradients and then accumulates the
    /// adjoint of every parameter leaf into them. Parameters the loss does not
    /// reach keep a zero gradient.
    pub fn backward_into(&self, loss: Var, store: &mut ParamStore) -> Result<Gradients> {
        let grads = self.backward(loss)?;
        store.zero_grads();
        for (node, g) in self.nodes.iter().zip(&grads.grads) {
            if let (Op::Param(id), Some(g)) = (&node.op, g) {
                let dst = store.grad_mut(*id);
                if dst.numel() != g.len() {
                    return Err(Error::shape("backward_into", dst.shape(), &[g.len()]));
                }
                for (d, s) in dst.data_mut().iter_mut().zip(g) {
                    *d += s;
                }
            }
        }
        Ok(grads)
    }

    fn replay(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        let mut acc = |var: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[var.0].requires_grad {
                return;
            }
            let n = self.nodes[var.0].value.numel();
            let buf = grads[var.0].get_or_insert_with(|| vec![0.0; n]);
            f(buf);
        };
        match &node.op {
            Op::Constant | Op::Input | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                acc(*a, &mut |da| {
                    gemm(m, n, k, g, false, tb.data(), true, da, 1.0)
                });
                acc(*b, &mut |db| {
                    gemm(k, m, n, ta.data(), true, g, false, db, 1.0)
                });
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    acc(v, &mut |d| d.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &mut |d| {
                    for ((x, y), w) in d.iter_mut().zip(g).zip(tb) {
                        *x += y * w;
                    }
                });
                acc(*b, &mut |d| {
                    for ((x, y), w) in d.iter_mut().zip(g).zip(ta) {
                        *x += y * w;
                    }
                });
            }
            Op::AddRow(x, b) => {
                acc(*x, &mut |d| d.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                let cols = out.cols();
                acc(*b, &mut |d| {
                    for row in g.chunks(cols) {
                        d.iter_mut().zip(row).for_each(|(x, y)| *x += y);
                    }
                });
            }
            Op::Scale(x, c) => {
                acc(*x, &mut |d| {
                    d.iter_mut().zip(g).for_each(|(x, y)| *x += c * y)
                });
            }
            Op::AddConst(x) => {
                acc(*x, &mut |d| d.iter_mut().zip(g).for_each(|(x, y)| *x += y));
            }
            Op::MulConst(x, c) => {
                acc(*x, &mut |d| {
                    for ((x, y), w) in d.iter_mut().zip(g).zip(c) {
                        *x += y * w;
                    }
                });
            }
            Op::Gelu(x) => {
                let tx = self.value(*x).data();
                acc(*x, &mut |d| {
                    for ((dx, gy), &xv) in d.iter_mut().zip(g).zip(tx) {
                        *dx += gy * gelu_parts(xv).1;
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let cols = out.cols();
                let n = cols as f64;
                let tg = self.value(*gain).data();
                acc(*gain, &mut |d| {
                    for (grow, hrow) in g.chunks(cols).zip(xhat.chunks(cols)) {
                        for c in 0..cols {
                            d[c] += grow[c] * hrow[c];
                        }
                    }
                });
                acc(*bias, &mut |d| {
                    for grow in g.chunks(cols) {
                        d.iter_mut().zip(grow).for_each(|(x, y)| *x += y);
                    }
                });
                acc(*x, &mut |d| {
                    for (r, (grow, hrow)) in g.chunks(cols).zip(xhat.chunks(cols)).enumerate() {
                        let mut mean_dh = 0.0;
                        let mut mean_dh_h = 0.0;
                        for c in 0..cols {
                            let dh = grow[c] * tg[c];
                            mean_dh += dh;
                            mean_dh_h += dh * hrow[c];
                        }
                        mean_dh /= n;
                        mean_dh_h /= n;
                        let drow = &mut d[r * cols..(r + 1) * cols];
                        for c in 0..cols {
                            let dh = grow[c] * tg[c];
                            drow[c] += rstd[r] * (dh - mean_dh - hrow[c] * mean_dh_h);
                        }
                    }
                });
            }
            Op::Softmax { x, axis } => {
                let shape = out.shape();
                let n = shape[*axis];
                let inner: usize = shape[axis + 1..].iter().product();
                let outer: usize = shape[..*axis].iter().product();
                let y = out.data();
                acc(*x, &mut |d| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let idx = |j: usize| (o * n + j) * inner + i;
                            let dot: f64 = (0..n).map(|j| g[idx(j)] * y[idx(j)]).sum();
                            for j in 0..n {
                                d[idx(j)] += y[idx(j)] * (g[idx(j)] - dot);
                            }
                        }
                    }
                });
            }
            Op::LogSoftmax(x) => {
                let cols = out.cols();
                let y = out.data();
                acc(*x, &mut |d| {
                    for ((drow, grow), yrow) in
                        d.chunks_mut(cols).zip(g.chunks(cols)).zip(y.chunks(cols))
                    {
                        let gs: f64 = grow.iter().sum();
                        for c in 0..cols {
                            drow[c] += grow[c] - yrow[c].exp() * gs;
                        }
                    }
                });
            }
            Op::Gather { table, ids } => {
                let cols = out.cols();
                acc(*table, &mut |d| {
                    for (r, &id) in ids.iter().enumerate() {
                        let src = &g[r * cols..(r + 1) * cols];
                        d[id * cols..(id + 1) * cols]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(x, y)| *x += y);
                    }
                });
            }
            Op::SelectRows { x, rows } => {
                let cols = out.cols();
                acc(*x, &mut |d| {
                    for (r, &src_row) in rows.iter().enumerate() {
                        let src = &g[r * cols..(r + 1) * cols];
                        d[src_row * cols..(src_row + 1) * cols]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(x, y)| *x += y);
                    }
                });
            }
            Op::Attention {
                q,
                k,
                v,
                segments,
                heads,
                probs,
            } => self.attention_backward(*q, *k, *v, segments, *heads, probs, g, &mut acc),
            Op::Pick { x, cols } => {
                let c = self.value(*x).cols();
                acc(*x, &mut |d| {
                    for (r, &j) in cols.iter().enumerate() {
                        d[r * c + j] += g[r];
                    }
                });
            }
            Op::RowDot { x, weights } => {
                let c = self.value(*x).cols();
                acc(*x, &mut |d| {
                    for (r, gr) in g.iter().enumerate() {
                        for j in 0..c {
                            d[r * c + j] += gr * weights[r * c + j];
                        }
                    }
                });
            }
            Op::Sum(x) => {
                acc(*x, &mut |d| d.iter_mut().for_each(|v| *v += g[0]));
            }
            Op::Mean(x) => {
                let n = self.value(*x).numel() as f64;
                acc(*x, &mut |d| d.iter_mut().for_each(|v| *v += g[0] / n));
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        q: Var,
        k: Var,
        v: Var,
        segments: &[Segment],
        heads: usize,
        probs: &[f64],
        g: &[f64],
        acc: &mut dyn FnMut(Var, &mut dyn FnMut(&mut [f64])),
    ) {
        let (qd, kd, vd) = (
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
        );
        let d = self.value(q).cols();
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut dq = vec![0.0; qd.len()];
        let mut dk = vec![0.0; kd.len()];
        let mut dv = vec![0.0; vd.len()];
        let mut dp = Vec::new();
        let mut offset = 0;
        for s in segments {
            let l = s.len;
            for h in 0..heads {
                let off = h * dh;
                let p = &probs[offset..offset + l * l];
                offset += l * l;
                dp.clear();
                dp.resize(l * l, 0.0);
                for i in 0..l {
                    let gi = &g[(s.start + i) * d + off..][..dh];
                    for j in 0..l {
                        let vj = &vd[(s.start + j) * d + off..][..dh];
                        dp[i * l + j] = gi.iter().zip(vj).map(|(a, b)| a * b).sum();
                        let pij = p[i * l + j];
                        let dvj = &mut dv[(s.start + j) * d + off..][..dh];
                        for (x, y) in dvj.iter_mut().zip(gi) {
                            *x += pij * y;
                        }
                    }
                }
                for i in 0..l {
                    let prow = &p[i * l..(i + 1) * l];
                    let dprow = &dp[i * l..(i + 1) * l];
                    let dot: f64 = prow.iter().zip(dprow).map(|(a, b)| a * b).sum();
                    for j in 0..l {
                        let ds = prow[j] * (dprow[j] - dot) * scale;
                        if ds == 0.0 {
                            continue;
                        }
                        let (ri, rj) = ((s.start + i) * d + off, (s.start + j) * d + off);
                        for c in 0..dh {
                            dq[ri + c] += ds * kd[rj + c];
                            dk[rj + c] += ds * qd[ri + c];
                        }
                    }
                }
            }
        }
        for (var, buf) in [(q, &dq), (k, &dk), (v, &dv)] {
            acc(var, &mut |d| {
                d.iter_mut().zip(buf).for_each(|(x, y)| *x += y)
            });
        }
    }
}
