//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Tape`] records every operation of one forward pass. Parameters enter
//! the tape through [`Tape::param`], which binds a [`ParamId`] to a leaf node
//! once per tape; [`Tape::backward`] then returns gradients for every
//! trainable parameter that participated. Frozen parameters and constants
//! never receive gradients and are skipped during the backward sweep.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::params::{ParamId, ParamStore};
use crate::tensor::{gemm_into, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

/// Boolean attention mask: `allowed[r * cols + c]` lets row `r` attend to column `c`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttnMask {
    rows: usize,
    cols: usize,
    allowed: Vec<bool>,
}

impl AttnMask {
    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut allowed = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                allowed.push(f(r, c));
            }
        }
        Self { rows, cols, allowed }
    }

    pub fn causal(n: usize) -> Self {
        Self::from_fn(n, n, |r, c| c <= r)
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn allows(&self, r: usize, c: usize) -> bool {
        self.allowed[r * self.cols + c]
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

enum Op {
    Leaf,
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulConst(Var, Tensor),
    AddRow(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Tensor, inv_std: Vec<f64> },
    Softmax(Var),
    Gather { table: Var, ids: Vec<usize> },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows { a: Var, start: usize },
    SliceCols { a: Var, start: usize },
    Reshape(Var),
    Transpose(Var),
    L2NormalizeRows { a: Var, norms: Vec<f64> },
    MaxOverRows { a: Var, argmax: Vec<usize> },
    MeanRows(Var),
    Sum(Var),
    CrossEntropy { logits: Var, targets: Vec<Option<usize>>, probs: Tensor, count: usize },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    dropout_rng: Option<ChaCha8Rng>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    /// An evaluation tape: dropout is disabled.
    pub fn new() -> Self {
        Self { nodes: Vec::new(), params: HashMap::new(), dropout_rng: None }
    }

    /// A training tape: dropout masks are drawn from a stream seeded by `seed`.
    pub fn training(seed: u64) -> Self {
        Self { nodes: Vec::new(), params: HashMap::new(), dropout_rng: Some(ChaCha8Rng::seed_from_u64(seed)) }
    }

    pub fn is_training(&self) -> bool {
        self.dropout_rng.is_some()
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

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A leaf whose gradient is reported by [`Gradients::wrt`].
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Leaf, store.is_trainable(id));
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.matmul_t(a, false, b, false)
    }

    pub fn matmul_t(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Var {
        let value = self.value(a).matmul_t(ta, self.value(b), tb);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::MatMul { a, b, ta, tb }, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Mul(a, b), rg)
    }

    pub fn mul_const(&mut self, a: Var, c: Tensor) -> Var {
        let value = self.value(a).zip_map(&c, |x, y| x * y);
        let rg = self.rg(a);
        self.push(value, Op::MulConst(a, c), rg)
    }

    /// Broadcast-adds a `1×c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(self.shape(row), (1, c), "add_row expects a 1x{c} row");
        let mut value = self.value(a).clone();
        let rv = self.value(row).data().to_vec();
        for i in 0..r {
            for (x, b) in value.row_mut(i).iter_mut().zip(&rv) {
                *x += b;
            }
        }
        let rg = self.rg(a) || self.rg(row);
        self.push(value, Op::AddRow(a, row), rg)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|x| x * s);
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, s), rg)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| 0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh()));
        let rg = self.rg(a);
        self.push(value, Op::Gelu(a), rg)
    }

    /// Row-wise layer normalization with learned `1×c` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let xv = self.value(x);
        let (r, c) = xv.shape();
        let mut xhat = Tensor::zeros(r, c);
        let mut inv_std = Vec::with_capacity(r);
        for i in 0..r {
            let row = xv.row(i);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for (o, v) in xhat.row_mut(i).iter_mut().zip(row) {
                *o = (v - mean) * is;
            }
            inv_std.push(is);
        }
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut value = xhat.clone();
        for i in 0..r {
            for ((o, gg), bb) in value.row_mut(i).iter_mut().zip(g).zip(b) {
                *o = *o * gg + bb;
            }
        }
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        self.push(value, Op::LayerNorm { x, gain, bias, xhat, inv_std }, rg)
    }

    /// Row-wise softmax. Masked-out entries get probability exactly zero; a row
    /// with no allowed entries is all zeros.
    pub fn softmax(&mut self, a: Var, mask: Option<&AttnMask>) -> Var {
        let av = self.value(a);
        let (r, c) = av.shape();
        if let Some(m) = mask {
            assert_eq!(m.shape(), (r, c), "mask shape mismatch");
        }
        let mut value = Tensor::zeros(r, c);
        for i in 0..r {
            let row = av.row(i);
            let allowed = |j: usize| mask.map_or(true, |m| m.allows(i, j));
            let max = (0..c).filter(|&j| allowed(j)).map(|j| row[j]).fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                continue;
            }
            let out = value.row_mut(i);
            let mut sum = 0.0;
            for j in 0..c {
                if allowed(j) {
                    let e = (row[j] - max).exp();
                    out[j] = e;
                    sum += e;
                }
            }
            for o in out.iter_mut() {
                *o /= sum;
            }
        }
        let rg = self.rg(a);
        self.push(value, Op::Softmax(a), rg)
    }

    /// Rows of `table` selected by `ids`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let tv = self.value(table);
        let mut value = Tensor::zeros(ids.len(), tv.cols());
        for (i, &id) in ids.iter().enumerate() {
            value.row_mut(i).copy_from_slice(tv.row(id));
        }
        let rg = self.rg(table);
        self.push(value, Op::Gather { table, ids: ids.to_vec() }, rg)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        if parts.len() == 1 {
            return parts[0];
        }
        let ts: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Tensor::concat_rows(&ts);
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(value, Op::ConcatRows(parts.to_vec()), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        if parts.len() == 1 {
            return parts[0];
        }
        let ts: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Tensor::concat_cols(&ts);
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(value, Op::ConcatCols(parts.to_vec()), rg)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        if start == 0 && len == self.shape(a).0 {
            return a;
        }
        let value = self.value(a).slice_rows(start, len);
        let rg = self.rg(a);
        self.push(value, Op::SliceRows { a, start }, rg)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        if start == 0 && len == self.shape(a).1 {
            return a;
        }
        let value = self.value(a).slice_cols(start, len);
        let rg = self.rg(a);
        self.push(value, Op::SliceCols { a, start }, rg)
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let value = self.value(a).clone().reshape(rows, cols);
        let rg = self.rg(a);
        self.push(value, Op::Reshape(a), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let rg = self.rg(a);
        self.push(value, Op::Transpose(a), rg)
    }

    pub fn l2_normalize_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let (r, _) = av.shape();
        let mut value = av.clone();
        let mut norms = Vec::with_capacity(r);
        for i in 0..r {
            let n = av.row(i).iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            for x in value.row_mut(i) {
                *x /= n;
            }
            norms.push(n);
        }
        let rg = self.rg(a);
        self.push(value, Op::L2NormalizeRows { a, norms }, rg)
    }

    /// Column-wise maximum over rows, `r×c → 1×c`. Ties resolve to the lowest row.
    pub fn max_over_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let (r, c) = av.shape();
        assert!(r > 0, "max over zero rows");
        let mut value = Tensor::zeros(1, c);
        let mut argmax = vec![0; c];
        for j in 0..c {
            let mut best = av.get(0, j);
            for i in 1..r {
                if av.get(i, j) > best {
                    best = av.get(i, j);
                    argmax[j] = i;
                }
            }
            value.set(0, j, best);
        }
        let rg = self.rg(a);
        self.push(value, Op::MaxOverRows { a, argmax }, rg)
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let (r, c) = av.shape();
        let mut value = Tensor::zeros(1, c);
        for i in 0..r {
            for (o, x) in value.row_mut(0).iter_mut().zip(av.row(i)) {
                *o += x;
            }
        }
        value.scale_assign(1.0 / r as f64);
        let rg = self.rg(a);
        self.push(value, Op::MeanRows(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(value, Op::Sum(a), rg)
    }

    /// Mean softmax cross-entropy over rows that carry a target.
    ///
    /// Panics if no row has a target.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Var {
        let lv = self.value(logits);
        let (r, c) = lv.shape();
        assert_eq!(targets.len(), r, "one target slot per logits row");
        let count = targets.iter().filter(|t| t.is_some()).count();
        assert!(count > 0, "cross_entropy with no targets");
        let mut probs = Tensor::zeros(r, c);
        let mut loss = 0.0;
        for (i, t) in targets.iter().enumerate() {
            let Some(t) = *t else { continue };
            assert!(t < c, "target {t} out of range {c}");
            let row = lv.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|x| (x - max).exp()).sum();
            let lse = max + sum.ln();
            loss += lse - row[t];
            for (p, x) in probs.row_mut(i).iter_mut().zip(row) {
                *p = (x - lse).exp();
            }
        }
        let rg = self.rg(logits);
        self.push(
            Tensor::scalar(loss / count as f64),
            Op::CrossEntropy { logits, targets: targets.to_vec(), probs, count },
            rg,
        )
    }

    /// Inverted dropout. Identity on evaluation tapes or when `p == 0`.
    pub fn dropout(&mut self, a: Var, p: f64) -> Var {
        if p <= 0.0 {
            return a;
        }
        let (r, c) = self.shape(a);
        let Some(rng) = self.dropout_rng.as_mut() else { return a };
        let keep = 1.0 - p;
        let mask: Vec<f64> = (0..r * c).map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect();
        self.mul_const(a, Tensor::from_vec(r, c, mask))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.shape(loss), (1, 1), "backward expects a scalar");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let params = self
            .params
            .iter()
            .filter(|(_, v)| self.nodes[v.0].requires_grad)
            .filter_map(|(&id, &v)| grads[v.0].as_ref().map(|g| (id, g.clone())))
            .collect();
        Gradients { nodes: grads, params }
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn backprop_node(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul { a, b, ta, tb } => {
                let av = self.value(a);
                let bv = self.value(b);
                if self.rg(a) {
                    let ga = if ta { bv.matmul_t(tb, g, true) } else { g.matmul_t(false, bv, !tb) };
                    self.accumulate(grads, a, ga);
                }
                if self.rg(b) {
                    let gb = if tb { g.matmul_t(true, av, ta) } else { av.matmul_t(!ta, g, false) };
                    self.accumulate(grads, b, gb);
                }
            }
            &Op::Add(a, b) => {
                self.accumulate(grads, a, g.clone());
                self.accumulate(grads, b, g.clone());
            }
            &Op::Sub(a, b) => {
                self.accumulate(grads, a, g.clone());
                self.accumulate(grads, b, g.map(|x| -x));
            }
            &Op::Mul(a, b) => {
                if self.rg(a) {
                    self.accumulate(grads, a, g.zip_map(self.value(b), |x, y| x * y));
                }
                if self.rg(b) {
                    self.accumulate(grads, b, g.zip_map(self.value(a), |x, y| x * y));
                }
            }
            Op::MulConst(a, c) => self.accumulate(grads, *a, g.zip_map(c, |x, y| x * y)),
            &Op::AddRow(a, row) => {
                self.accumulate(grads, a, g.clone());
                if self.rg(row) {
                    self.accumulate(grads, row, column_sums(g));
                }
            }
            &Op::Scale(a, s) => self.accumulate(grads, a, g.map(|x| x * s)),
            &Op::Gelu(a) => {
                let d = self.value(a).zip_map(g, |x, gy| {
                    let u = GELU_C * (x + 0.044715 * x * x * x);
                    let t = u.tanh();
                    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
                    gy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)
                });
                self.accumulate(grads, a, d);
            }
            Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                let (r, c) = xhat.shape();
                if self.rg(*gain) {
                    self.accumulate(grads, *gain, column_sums(&g.zip_map(xhat, |a, b| a * b)));
                }
                if self.rg(*bias) {
                    self.accumulate(grads, *bias, column_sums(g));
                }
                if self.rg(*x) {
                    let gv = self.value(*gain).data();
                    let mut dx = Tensor::zeros(r, c);
                    let n = c as f64;
                    for i in 0..r {
                        let dxhat: Vec<f64> = g.row(i).iter().zip(gv).map(|(a, b)| a * b).collect();
                        let sum_d: f64 = dxhat.iter().sum();
                        let sum_dx: f64 = dxhat.iter().zip(xhat.row(i)).map(|(a, b)| a * b).sum();
                        let is = inv_std[i];
                        for (j, o) in dx.row_mut(i).iter_mut().enumerate() {
                            *o = is / n * (n * dxhat[j] - sum_d - xhat.get(i, j) * sum_dx);
                        }
                    }
                    self.accumulate(grads, *x, dx);
                }
            }
            &Op::Softmax(a) => {
                let y = &node.value;
                let (r, c) = y.shape();
                let mut dx = Tensor::zeros(r, c);
                for i in 0..r {
                    let dot: f64 = g.row(i).iter().zip(y.row(i)).map(|(a, b)| a * b).sum();
                    for (j, o) in dx.row_mut(i).iter_mut().enumerate() {
                        *o = y.get(i, j) * (g.get(i, j) - dot);
                    }
                }
                self.accumulate(grads, a, dx);
            }
            Op::Gather { table, ids } => {
                let (r, c) = self.shape(*table);
                let mut dt = Tensor::zeros(r, c);
                for (i, &id) in ids.iter().enumerate() {
                    for (o, x) in dt.row_mut(id).iter_mut().zip(g.row(i)) {
                        *o += x;
                    }
                }
                self.accumulate(grads, *table, dt);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let rows = self.shape(p).0;
                    if self.rg(p) {
                        self.accumulate(grads, p, g.slice_rows(offset, rows));
                    }
                    offset += rows;
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let cols = self.shape(p).1;
                    if self.rg(p) {
                        self.accumulate(grads, p, g.slice_cols(offset, cols));
                    }
                    offset += cols;
                }
            }
            &Op::SliceRows { a, start } => {
                let (r, c) = self.shape(a);
                let mut da = Tensor::zeros(r, c);
                for i in 0..g.rows() {
                    da.row_mut(start + i).copy_from_slice(g.row(i));
                }
                self.accumulate(grads, a, da);
            }
            &Op::SliceCols { a, start } => {
                let (r, c) = self.shape(a);
                let mut da = Tensor::zeros(r, c);
                for i in 0..r {
                    da.row_mut(i)[start..start + g.cols()].copy_from_slice(g.row(i));
                }
                self.accumulate(grads, a, da);
            }
            &Op::Reshape(a) => {
                let (r, c) = self.shape(a);
                self.accumulate(grads, a, g.clone().reshape(r, c));
            }
            &Op::Transpose(a) => self.accumulate(grads, a, g.transpose()),
            Op::L2NormalizeRows { a, norms } => {
                let y = &node.value;
                let (r, c) = y.shape();
                let mut dx = Tensor::zeros(r, c);
                for i in 0..r {
                    let dot: f64 = g.row(i).iter().zip(y.row(i)).map(|(a, b)| a * b).sum();
                    for (j, o) in dx.row_mut(i).iter_mut().enumerate() {
                        *o = (g.get(i, j) - y.get(i, j) * dot) / norms[i];
                    }
                }
                self.accumulate(grads, *a, dx);
            }
            Op::MaxOverRows { a, argmax } => {
                let (r, c) = self.shape(*a);
                let mut da = Tensor::zeros(r, c);
                for (j, &i) in argmax.iter().enumerate() {
                    da.set(i, j, g.get(0, j));
                }
                self.accumulate(grads, *a, da);
            }
            &Op::MeanRows(a) => {
                let (r, c) = self.shape(a);
                let mut da = Tensor::zeros(r, c);
                for i in 0..r {
                    for (o, x) in da.row_mut(i).iter_mut().zip(g.row(0)) {
                        *o = x / r as f64;
                    }
                }
                self.accumulate(grads, a, da);
            }
            &Op::Sum(a) => {
                let (r, c) = self.shape(a);
                self.accumulate(grads, a, Tensor::full(r, c, g.item()));
            }
            Op::CrossEntropy { logits, targets, probs, count } => {
                let (r, c) = probs.shape();
                let scale = g.item() / *count as f64;
                let mut dl = Tensor::zeros(r, c);
                for (i, t) in targets.iter().enumerate() {
                    let Some(t) = *t else { continue };
                    for (o, p) in dl.row_mut(i).iter_mut().zip(probs.row(i)) {
                        *o = p * scale;
                    }
                    let cur = dl.get(i, t);
                    dl.set(i, t, cur - scale);
                }
                self.accumulate(grads, *logits, dl);
            }
        }
    }
}

fn column_sums(g: &Tensor) -> Tensor {
    let ones = Tensor::full(1, g.rows(), 1.0);
    let mut out = Tensor::zeros(1, g.cols());
    gemm_into(&ones, false, g, false, &mut out, 0.0);
    out
}

/// Result of [`Tape::backward`].
pub struct Gradients {
    nodes: Vec<Option<Tensor>>,
    params: BTreeMap<ParamId, Tensor>,
}

impl Gradients {
    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(&id)
    }

    /// Gradients of trainable parameters, ordered by id.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.params.iter().map(|(&id, t)| (id, t))
    }

    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.nodes.get(v.0).and_then(Option::as_ref)
    }

    /// Adds another set of parameter gradients (gradient accumulation).
    pub fn accumulate_params(&mut self, other: &Gradients) {
        for (&id, g) in &other.params {
            match self.params.get_mut(&id) {
                Some(existing) => existing.add_assign(g),
                None => {
                    self.params.insert(id, g.clone());
                }
            }
        }
    }

    pub fn scale_params(&mut self, s: f64) {
        for g in self.params.values_mut() {
            g.scale_assign(s);
        }
    }

    pub fn into_params(self) -> BTreeMap<ParamId, Tensor> {
        self.params
    }
}
