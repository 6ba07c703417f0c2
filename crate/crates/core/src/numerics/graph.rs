//! Reverse-mode differentiation over a linear tape.
//!
//! A [`Graph`] records every operation of one forward pass. Nodes are
//! addressed by [`Var`] handles; [`Graph::backward`] replays the tape in
//! reverse and returns per-node gradients. Parameters enter the tape through
//! [`Graph::param`] and their gradients are collected with
//! [`Gradients::param_grads`].

use super::params::{ParamId, ParamStore};
use super::tensor::{softmax_into, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Gelu(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Tensor, inv_std: Vec<f64> },
    L2NormalizeRows { x: Var, inv_norm: Vec<f64> },
    GatherRows(Var, Vec<usize>),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    ShiftRows(Var, isize),
    SumAll(Var),
    /// Scalar output whose local gradients were computed during the forward pass.
    Fused(Vec<(Var, Tensor)>),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Rows whose squared norm falls below this are rejected by `l2_normalize_rows`.
pub const MIN_NORM: f64 = 1e-12;

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::with_capacity(256) }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        debug_assert!(value.is_finite() || !needs_grad, "non-finite value produced by {op:?}");
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    #[inline]
    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.value(v).item()
    }

    /// A constant: never receives gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// An input whose gradient is tracked (see [`Gradients::wrt`]).
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id), true)
    }

    /// Forward value of `x`, cut off from the backward pass.
    pub fn detach(&mut self, x: Var) -> Var {
        let v = self.value(x).clone();
        self.constant(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::MatMul(a, b), ng)
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul_t(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::MatMulT(a, b), ng)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        let ng = self.ng(a);
        self.push(v, Op::Transpose(a), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Mul(a, b), ng)
    }

    /// Adds a `1 x n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (av, rv) = (self.value(a), self.value(row));
        assert_eq!(rv.rows(), 1, "add_row expects a single row");
        assert_eq!(av.cols(), rv.cols(), "add_row width mismatch");
        let mut v = av.clone();
        for r in 0..v.rows() {
            for (x, b) in v.row_mut(r).iter_mut().zip(rv.data()) {
                *x += b;
            }
        }
        let ng = self.ng(a) || self.ng(row);
        self.push(v, Op::AddRow(a, row), ng)
    }

    /// Multiplies every row of `a` elementwise by a `1 x n` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let (av, rv) = (self.value(a), self.value(row));
        assert_eq!(rv.rows(), 1, "mul_row expects a single row");
        assert_eq!(av.cols(), rv.cols(), "mul_row width mismatch");
        let mut v = av.clone();
        for r in 0..v.rows() {
            for (x, b) in v.row_mut(r).iter_mut().zip(rv.data()) {
                *x *= b;
            }
        }
        let ng = self.ng(a) || self.ng(row);
        self.push(v, Op::MulRow(a, row), ng)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).map(|x| s * x);
        let ng = self.ng(a);
        self.push(v, Op::Scale(a, s), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        let ng = self.ng(a);
        self.push(v, Op::Tanh(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        let ng = self.ng(a);
        self.push(v, Op::Sigmoid(a), ng)
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| gelu(x).0);
        let ng = self.ng(a);
        self.push(v, Op::Gelu(a), ng)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let mut v = Tensor::zeros(av.rows(), av.cols());
        for r in 0..av.rows() {
            softmax_into(av.row(r), v.row_mut(r));
        }
        let ng = self.ng(a);
        self.push(v, Op::SoftmaxRows(a), ng)
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let mut v = av.clone();
        for r in 0..av.rows() {
            let lse = super::tensor::log_sum_exp(av.row(r));
            for x in v.row_mut(r) {
                *x -= lse;
            }
        }
        let ng = self.ng(a);
        self.push(v, Op::LogSoftmaxRows(a), ng)
    }

    /// Per-row layer normalization with learned `1 x n` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let xv = self.value(x);
        let (rows, cols) = (xv.rows(), xv.cols());
        let mut xhat = Tensor::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for (h, v) in xhat.row_mut(r).iter_mut().zip(row) {
                *h = (v - mean) * is;
            }
            inv_std.push(is);
        }
        let (gv, bv) = (self.value(gain), self.value(bias));
        let mut out = xhat.clone();
        for r in 0..rows {
            for ((o, g), b) in out.row_mut(r).iter_mut().zip(gv.data()).zip(bv.data()) {
                *o = *o * g + b;
            }
        }
        let ng = self.ng(x) || self.ng(gain) || self.ng(bias);
        self.push(out, Op::LayerNorm { x, gain, bias, xhat, inv_std }, ng)
    }

    /// Divides each row by its L2 norm. Panics on a row with norm below
    /// [`MIN_NORM`]; callers check [`Graph::min_row_norm`] first when the input
    /// can legitimately be degenerate.
    pub fn l2_normalize_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let mut out = xv.clone();
        let mut inv_norm = Vec::with_capacity(xv.rows());
        for r in 0..xv.rows() {
            let n = super::tensor::norm(xv.row(r));
            assert!(n >= MIN_NORM, "degenerate row {r} in l2_normalize_rows");
            let inv = 1.0 / n;
            for v in out.row_mut(r) {
                *v *= inv;
            }
            inv_norm.push(inv);
        }
        let ng = self.ng(x);
        self.push(out, Op::L2NormalizeRows { x, inv_norm }, ng)
    }

    pub fn min_row_norm(&self, x: Var) -> f64 {
        let xv = self.value(x);
        (0..xv.rows()).map(|r| super::tensor::norm(xv.row(r))).fold(f64::INFINITY, f64::min)
    }

    pub fn gather_rows(&mut self, a: Var, idx: Vec<usize>) -> Var {
        let av = self.value(a);
        let cols = av.cols();
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &i in &idx {
            data.extend_from_slice(av.row(i));
        }
        let v = Tensor::new(idx.len(), cols, data);
        let ng = self.ng(a);
        self.push(v, Op::GatherRows(a, idx), ng)
    }

    pub fn row(&mut self, a: Var, r: usize) -> Var {
        self.gather_rows(a, vec![r])
    }

    /// Columns `[start, end)`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let av = self.value(a);
        assert!(start < end && end <= av.cols(), "slice_cols out of range");
        let w = end - start;
        let mut data = Vec::with_capacity(av.rows() * w);
        for r in 0..av.rows() {
            data.extend_from_slice(&av.row(r)[start..end]);
        }
        let v = Tensor::new(av.rows(), w, data);
        let ng = self.ng(a);
        self.push(v, Op::SliceCols(a, start), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut v = Tensor::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.rows(), rows, "concat_cols row mismatch");
            for r in 0..rows {
                v.row_mut(r)[off..off + pv.cols()].copy_from_slice(pv.row(r));
            }
            off += pv.cols();
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(v, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.cols(), cols, "concat_rows column mismatch");
            data.extend_from_slice(pv.data());
            rows += pv.rows();
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(Tensor::new(rows, cols, data), Op::ConcatRows(parts.to_vec()), ng)
    }

    /// `out[r] = a[r - offset]`, zero where the source row is out of range.
    pub fn shift_rows(&mut self, a: Var, offset: isize) -> Var {
        let av = self.value(a);
        let mut v = Tensor::zeros(av.rows(), av.cols());
        for r in 0..av.rows() {
            let src = r as isize - offset;
            if src >= 0 && (src as usize) < av.rows() {
                v.row_mut(r).copy_from_slice(av.row(src as usize));
            }
        }
        let ng = self.ng(a);
        self.push(v, Op::ShiftRows(a, offset), ng)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        let ng = self.ng(a);
        self.push(v, Op::SumAll(a), ng)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).data().len() as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    /// Row-wise dot product of two equally shaped matrices, as an `r x 1` column.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Var {
        let m = self.mul(a, b);
        let cols = self.value(m).cols();
        let ones = self.constant(Tensor::filled(cols, 1, 1.0));
        self.matmul(m, ones)
    }

    /// Cosine similarity of two `1 x n` rows, as a `1 x 1` value.
    pub fn cosine(&mut self, a: Var, b: Var) -> Var {
        let an = self.l2_normalize_rows(a);
        let bn = self.l2_normalize_rows(b);
        let m = self.mul(an, bn);
        self.sum_all(m)
    }

    /// Mean softmax cross-entropy over rows of `logits`; rows whose target is
    /// `None` are skipped. Returns `None` if every row is skipped.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Option<Var> {
        let lv = self.value(logits);
        assert_eq!(lv.rows(), targets.len(), "one target per row");
        let count = targets.iter().flatten().count();
        if count == 0 {
            return None;
        }
        let mut grad = Tensor::zeros(lv.rows(), lv.cols());
        let mut loss = 0.0;
        let inv = 1.0 / count as f64;
        for (r, t) in targets.iter().enumerate() {
            let Some(t) = *t else { continue };
            let row = lv.row(r);
            let lse = super::tensor::log_sum_exp(row);
            loss += lse - row[t];
            let g = grad.row_mut(r);
            for (gj, &x) in g.iter_mut().zip(row) {
                *gj = (x - lse).exp() * inv;
            }
            g[t] -= inv;
        }
        Some(self.fused(loss * inv, vec![(logits, grad)]))
    }

    /// Records a scalar computed outside the tape together with its gradient
    /// with respect to each input.
    pub fn fused(&mut self, value: f64, local_grads: Vec<(Var, Tensor)>) -> Var {
        for (v, g) in &local_grads {
            assert_eq!(self.value(*v).shape(), g.shape(), "fused gradient shape mismatch");
        }
        let ng = local_grads.iter().any(|(v, _)| self.ng(*v));
        self.push(Tensor::scalar(value), Op::Fused(local_grads), ng)
    }

    /// Reverse pass from a `1 x 1` output.
    pub fn backward(&self, output: Var) -> Gradients {
        assert_eq!(self.value(output).shape(), [1, 1], "backward needs a scalar output");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(gout) = grads[idx].take() else { continue };
            self.propagate(node, &gout, &mut grads);
            grads[idx] = Some(gout);
        }
        Gradients { grads, ops: self.nodes.iter().map(|n| param_of(&n.op)).collect() }
    }

    fn propagate(&self, node: &Node, gout: &Tensor, grads: &mut [Option<Tensor>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let mut acc = |v: Var, g: Tensor| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        };
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                if self.ng(*a) {
                    acc(*a, gout.matmul_t(val(*b)));
                }
                if self.ng(*b) {
                    acc(*b, val(*a).t_matmul(gout));
                }
            }
            Op::MatMulT(a, b) => {
                // out = a bᵀ: da = g b, db = gᵀ a
                if self.ng(*a) {
                    acc(*a, gout.matmul(val(*b)));
                }
                if self.ng(*b) {
                    acc(*b, gout.t_matmul(val(*a)));
                }
            }
            Op::Transpose(a) => acc(*a, gout.transpose()),
            Op::Add(a, b) => {
                acc(*a, gout.clone());
                acc(*b, gout.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, gout.clone());
                acc(*b, gout.map(|x| -x));
            }
            Op::Mul(a, b) => {
                if self.ng(*a) {
                    acc(*a, gout.zip_map(val(*b), |g, y| g * y));
                }
                if self.ng(*b) {
                    acc(*b, gout.zip_map(val(*a), |g, x| g * x));
                }
            }
            Op::AddRow(a, row) => {
                acc(*a, gout.clone());
                if self.ng(*row) {
                    acc(*row, column_sums(gout));
                }
            }
            Op::MulRow(a, row) => {
                let rv = val(*row);
                if self.ng(*a) {
                    let mut ga = gout.clone();
                    for r in 0..ga.rows() {
                        for (g, b) in ga.row_mut(r).iter_mut().zip(rv.data()) {
                            *g *= b;
                        }
                    }
                    acc(*a, ga);
                }
                if self.ng(*row) {
                    acc(*row, column_sums(&gout.zip_map(val(*a), |g, x| g * x)));
                }
            }
            Op::Scale(a, s) => acc(*a, gout.map(|g| g * s)),
            Op::Tanh(a) => acc(*a, gout.zip_map(&node.value, |g, y| g * (1.0 - y * y))),
            Op::Sigmoid(a) => acc(*a, gout.zip_map(&node.value, |g, y| g * y * (1.0 - y))),
            Op::Gelu(a) => acc(*a, gout.zip_map(val(*a), |g, x| g * gelu(x).1)),
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let mut ga = Tensor::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let d = super::tensor::dot(gout.row(r), y.row(r));
                    for ((o, g), yv) in ga.row_mut(r).iter_mut().zip(gout.row(r)).zip(y.row(r)) {
                        *o = yv * (g - d);
                    }
                }
                acc(*a, ga);
            }
            Op::LogSoftmaxRows(a) => {
                let y = &node.value;
                let mut ga = Tensor::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let s: f64 = gout.row(r).iter().sum();
                    for ((o, g), yv) in ga.row_mut(r).iter_mut().zip(gout.row(r)).zip(y.row(r)) {
                        *o = g - yv.exp() * s;
                    }
                }
                acc(*a, ga);
            }
            Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                let gv = val(*gain);
                let cols = xhat.cols();
                if self.ng(*bias) {
                    acc(*bias, column_sums(gout));
                }
                if self.ng(*gain) {
                    acc(*gain, column_sums(&gout.zip_map(xhat, |g, h| g * h)));
                }
                if self.ng(*x) {
                    let mut gx = Tensor::zeros(xhat.rows(), cols);
                    for r in 0..xhat.rows() {
                        let dxhat: Vec<f64> =
                            gout.row(r).iter().zip(gv.data()).map(|(g, w)| g * w).collect();
                        let mean_d = dxhat.iter().sum::<f64>() / cols as f64;
                        let mean_dh = super::tensor::dot(&dxhat, xhat.row(r)) / cols as f64;
                        for ((o, d), h) in gx.row_mut(r).iter_mut().zip(&dxhat).zip(xhat.row(r)) {
                            *o = inv_std[r] * (d - mean_d - h * mean_dh);
                        }
                    }
                    acc(*x, gx);
                }
            }
            Op::L2NormalizeRows { x, inv_norm } => {
                let y = &node.value;
                let mut gx = Tensor::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let d = super::tensor::dot(gout.row(r), y.row(r));
                    for ((o, g), yv) in gx.row_mut(r).iter_mut().zip(gout.row(r)).zip(y.row(r)) {
                        *o = inv_norm[r] * (g - yv * d);
                    }
                }
                acc(*x, gx);
            }
            Op::GatherRows(a, idx) => {
                let av = val(*a);
                let mut ga = Tensor::zeros(av.rows(), av.cols());
                for (k, &i) in idx.iter().enumerate() {
                    for (o, g) in ga.row_mut(i).iter_mut().zip(gout.row(k)) {
                        *o += g;
                    }
                }
                acc(*a, ga);
            }
            Op::SliceCols(a, start) => {
                let av = val(*a);
                let mut ga = Tensor::zeros(av.rows(), av.cols());
                let w = gout.cols();
                for r in 0..av.rows() {
                    ga.row_mut(r)[*start..*start + w].copy_from_slice(gout.row(r));
                }
                acc(*a, ga);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let w = val(p).cols();
                    if self.ng(p) {
                        let mut gp = Tensor::zeros(gout.rows(), w);
                        for r in 0..gout.rows() {
                            gp.row_mut(r).copy_from_slice(&gout.row(r)[off..off + w]);
                        }
                        acc(p, gp);
                    }
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let h = val(p).rows();
                    if self.ng(p) {
                        let cols = gout.cols();
                        let data = gout.data()[off * cols..(off + h) * cols].to_vec();
                        acc(p, Tensor::new(h, cols, data));
                    }
                    off += h;
                }
            }
            Op::ShiftRows(a, offset) => {
                let mut ga = Tensor::zeros(gout.rows(), gout.cols());
                for r in 0..gout.rows() {
                    let src = r as isize - offset;
                    if src >= 0 && (src as usize) < gout.rows() {
                        ga.row_mut(src as usize).copy_from_slice(gout.row(r));
                    }
                }
                acc(*a, ga);
            }
            Op::SumAll(a) => {
                let av = val(*a);
                acc(*a, Tensor::filled(av.rows(), av.cols(), gout.item()));
            }
            Op::Fused(locals) => {
                let g = gout.item();
                for (v, lg) in locals {
                    acc(*v, lg.map(|x| x * g));
                }
            }
        }
    }
}

fn param_of(op: &Op) -> Option<ParamId> {
    match op {
        Op::Param(id) => Some(*id),
        _ => None,
    }
}

fn column_sums(t: &Tensor) -> Tensor {
    let mut out = vec![0.0; t.cols()];
    for r in 0..t.rows() {
        for (o, v) in out.iter_mut().zip(t.row(r)) {
            *o += v;
        }
    }
    Tensor::row_vector(out)
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// GELU (tanh form) and its derivative.
fn gelu(x: f64) -> (f64, f64) {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    let u = C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = C * (1.0 + 3.0 * 0.044715 * x * x);
    (0.5 * x * (1.0 + t), 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)
}

/// Result of [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    ops: Vec<Option<ParamId>>,
}

impl Gradients {
    /// Gradient with respect to any node (`None` if it received none).
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Sums gradients of every parameter node, indexed by [`ParamId`].
    pub fn param_grads(&self, store: &ParamStore) -> ParamGrads {
        let mut out: Vec<Option<Tensor>> = (0..store.len()).map(|_| None).collect();
        for (g, id) in self.grads.iter().zip(&self.ops) {
            if let (Some(g), Some(id)) = (g, id) {
                match &mut out[id.index()] {
                    Some(e) => e.add_assign(g),
                    slot @ None => *slot = Some(g.clone()),
                }
            }
        }
        ParamGrads(out)
    }
}

/// Per-parameter gradients; `None` marks a parameter untouched by the loss.
#[derive(Debug, Clone)]
pub struct ParamGrads(pub Vec<Option<Tensor>>);

impl ParamGrads {
    pub fn empty(n: usize) -> Self {
        ParamGrads((0..n).map(|_| None).collect())
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.0.get(id.index()).and_then(Option::as_ref)
    }

    /// `self += scale * other`.
    pub fn accumulate(&mut self, other: &ParamGrads, scale: f64) {
        if self.0.len() < other.0.len() {
            self.0.resize_with(other.0.len(), || None);
        }
        for (s, o) in self.0.iter_mut().zip(&other.0) {
            let Some(o) = o else { continue };
            let scaled = o.map(|x| x * scale);
            match s {
                Some(e) => e.add_assign(&scaled),
                None => *s = Some(scaled),
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(Tensor::is_finite)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd<F: Fn(&Tensor) -> f64>(f: F, x: &Tensor, eps: f64) -> Tensor {
        let mut g = Tensor::zeros(x.rows(), x.cols());
        for i in 0..x.data().len() {
            let mut p = x.clone();
            p.data_mut()[i] += eps;
            let mut m = x.clone();
            m.data_mut()[i] -= eps;
            g.data_mut()[i] = (f(&p) - f(&m)) / (2.0 * eps);
        }
        g
    }

    fn sample(rows: usize, cols: usize, seed: u64) -> Tensor {
        let mut s = seed;
        let data = (0..rows * cols)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect();
        Tensor::new(rows, cols, data)
    }

    fn check(build: impl Fn(&mut Graph, Var) -> Var, x: Tensor) {
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let out = build(&mut g, xv);
        let grads = g.backward(out);
        let analytic = grads.wrt(xv).cloned().unwrap_or_else(|| Tensor::zeros(x.rows(), x.cols()));
        let numeric = fd(
            |t| {
                let mut g = Graph::new();
                let v = g.input(t.clone());
                let o = build(&mut g, v);
                g.scalar_value(o)
            },
            &x,
            1e-6,
        );
        for (a, n) in analytic.data().iter().zip(numeric.data()) {
            assert!((a - n).abs() <= 1e-6 * (1.0 + a.abs()), "analytic {a} vs numeric {n}");
        }
    }

    #[test]
    fn elementwise_and_matrix_ops_backprop() {
        let w = sample(3, 4, 9);
        check(
            move |g, x| {
                let wv = g.constant(w.clone());
                let y = g.matmul(x, wv);
                let y = g.tanh(y);
                let s = g.sigmoid(y);
                let z = g.gelu(s);
                g.sum_all(z)
            },
            sample(2, 3, 1),
        );
    }

    #[test]
    fn softmax_family_backprop() {
        check(
            |g, x| {
                let s = g.softmax_rows(x);
                let l = g.log_softmax_rows(x);
                let m = g.mul(s, l);
                let t = g.transpose(m);
                let c = g.constant(sample(4, 2, 3));
                let y = g.matmul_t(t, c);
                g.sum_all(y)
            },
            sample(2, 4, 2),
        );
    }

    #[test]
    fn norm_family_backprop() {
        let gain = sample(1, 5, 4);
        check(
            move |g, x| {
                let gv = g.constant(gain.clone());
                let b = g.constant(Tensor::zeros(1, 5));
                let y = g.layer_norm(x, gv, b);
                let n = g.l2_normalize_rows(x);
                let w = g.constant(sample(3, 5, 8));
                let p = g.mul(y, n);
                let q = g.mul(p, w);
                g.sum_all(q)
            },
            sample(3, 5, 5),
        );
    }

    #[test]
    fn structural_ops_backprop() {
        check(
            |g, x| {
                let a = g.gather_rows(x, vec![2, 0, 2]);
                let b = g.slice_cols(a, 1, 3);
                let c = g.shift_rows(b, 1);
                let d = g.concat_cols(&[b, c]);
                let e = g.concat_rows(&[d, d]);
                let w = g.constant(sample(6, 4, 7));
                let f = g.mul(e, w);
                let h = g.tanh(f);
                g.sum_all(h)
            },
            sample(3, 4, 6),
        );
    }

    #[test]
    fn broadcast_row_ops_backprop() {
        check(
            |g, x| {
                let r = g.row(x, 1);
                let a = g.add_row(x, r);
                let m = g.mul_row(a, r);
                let s = g.sub(m, x);
                let t = g.tanh(s);
                g.mean_all(t)
            },
            sample(3, 4, 11),
        );
    }

    #[test]
    fn cross_entropy_matches_log_softmax_pick() {
        let x = sample(3, 4, 12);
        let targets = [Some(1), None, Some(3)];
        check(
            move |g, v| {
                let l = g.cross_entropy(v, &targets).unwrap();
                let s = g.scale(l, 2.0);
                g.add(s, l)
            },
            x.clone(),
        );
        let mut g = Graph::new();
        let v = g.constant(x.clone());
        let ce = g.cross_entropy(v, &targets).unwrap();
        let ls = g.log_softmax_rows(v);
        let direct = -(g.value(ls).get(0, 1) + g.value(ls).get(2, 3)) / 2.0;
        assert!((g.scalar_value(ce) - direct).abs() < 1e-14);
        assert!(g.cross_entropy(v, &[None, None, None]).is_none());
    }

    #[test]
    fn detach_blocks_gradient() {
        let mut g = Graph::new();
        let x = g.input(Tensor::scalar(2.0));
        let d = g.detach(x);
        let y = g.mul(d, x);
        let grads = g.backward(y);
        assert_eq!(grads.wrt(x).unwrap().item(), 2.0);
    }
}
