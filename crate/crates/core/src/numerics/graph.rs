//! Tape-based reverse-mode differentiation over [`RealArray`] values.
//!
//! A [`Graph`] records every operation as a node appended to a tape. Node
//! indices are therefore already in topological order, and [`Graph::backward`]
//! walks the tape once in reverse. Graphs are cheap to build and are meant to
//! be rebuilt for every story; parameters are borrowed, not copied.

use std::borrow::Cow;

use super::array::{log_softmax, matmul_into, softmax, sorted_sum, RealArray};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRows(Var, Var),
    AddN(Vec<Var>),
    Mul(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Pick(Var, usize),
    Sum(Var),
    MeanRows(Var),
    Row(Var, usize),
    WeightedRows(Var, Var),
}

struct Node<'a> {
    value: Cow<'a, RealArray>,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Graph<'a> {
    nodes: Vec<Node<'a>>,
}

/// Gradients of a scalar root with respect to every leaf that requires one.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<RealArray>>,
}

impl Gradients {
    /// `None` when the leaf is unreachable from the root.
    pub fn get(&self, var: Var) -> Option<&RealArray> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient of `var`, or zeros of `shape` when unreachable.
    pub fn get_or_zeros(&self, var: Var, shape: &[usize]) -> RealArray {
        self.get(var).cloned().unwrap_or_else(|| RealArray::zeros(shape))
    }
}

impl<'a> Graph<'a> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &RealArray {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Differentiable leaf borrowing its value.
    pub fn param(&mut self, value: &'a RealArray) -> Var {
        self.push(Cow::Borrowed(value), Op::Leaf, true)
    }

    /// Differentiable leaf owning its value.
    pub fn param_owned(&mut self, value: RealArray) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, true)
    }

    pub fn constant(&mut self, value: RealArray) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, false)
    }

    pub fn constant_ref(&mut self, value: &'a RealArray) -> Var {
        self.push(Cow::Borrowed(value), Op::Leaf, false)
    }

    fn push(&mut self, value: Cow<'a, RealArray>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn derived(&mut self, value: RealArray, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.push(Cow::Owned(value), op, needs_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.derived(value, Op::MatMul(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.derived(value, Op::Add(a, b), &[a, b]))
    }

    /// Adds vector `v` to every row of matrix `m`.
    pub fn add_rows(&mut self, m: Var, v: Var) -> Result<Var> {
        let (mv, vv) = (self.value(m), self.value(v));
        if mv.shape().len() != 2 || vv.shape() != [mv.cols()] {
            return Err(Error::shape("add_rows", mv.shape(), vv.shape()));
        }
        let cols = mv.cols();
        let mut data = mv.data().to_vec();
        for row in data.chunks_mut(cols) {
            for (x, &b) in row.iter_mut().zip(vv.data()) {
                *x += b;
            }
        }
        let value = RealArray::new(mv.shape().to_vec(), data)?;
        Ok(self.derived(value, Op::AddRows(m, v), &[m, v]))
    }

    /// Sum of equally shaped arrays.
    pub fn add_n(&mut self, vars: &[Var]) -> Result<Var> {
        let first = *vars.first().ok_or(Error::EmptyInput("add_n"))?;
        let mut acc = self.value(first).clone();
        for &v in &vars[1..] {
            let val = self.value(v);
            if val.shape() != acc.shape() {
                return Err(Error::shape("add_n", acc.shape(), val.shape()));
            }
            acc.add_assign(val.data());
        }
        Ok(self.derived(acc, Op::AddN(vars.to_vec()), vars))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).mul(self.value(b))?;
        Ok(self.derived(value, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| x * c);
        self.derived(value, Op::Scale(a, c), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).sigmoid();
        self.derived(value, Op::Sigmoid(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).tanh();
        self.derived(value, Op::Tanh(a), &[a])
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).softmax()?;
        Ok(self.derived(value, Op::Softmax(a), &[a]))
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let src = self.value(a);
        let value = RealArray::new(src.shape().to_vec(), log_softmax(src.data())).expect("same shape");
        self.derived(value, Op::LogSoftmax(a), &[a])
    }

    /// Scalar holding element `idx` of `a` (flat index).
    pub fn pick(&mut self, a: Var, idx: usize) -> Result<Var> {
        let src = self.value(a);
        let x = *src.data().get(idx).ok_or(Error::TokenOutOfRange {
            id: idx,
            size: src.len(),
        })?;
        Ok(self.derived(RealArray::scalar(x), Op::Pick(a, idx), &[a]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.derived(RealArray::scalar(s), Op::Sum(a), &[a])
    }

    /// Column means of a matrix.
    pub fn mean_rows(&mut self, m: Var) -> Result<Var> {
        let mv = self.value(m);
        if mv.shape().len() != 2 {
            return Err(Error::shape("mean_rows", mv.shape(), &[]));
        }
        let (rows, cols) = (mv.rows(), mv.cols());
        let mut out = vec![0.0; cols];
        for r in 0..rows {
            for (o, &x) in out.iter_mut().zip(mv.row(r)) {
                *o += x;
            }
        }
        let inv = 1.0 / rows as f64;
        out.iter_mut().for_each(|o| *o *= inv);
        Ok(self.derived(RealArray::vector(out), Op::MeanRows(m), &[m]))
    }

    /// Row `idx` of a matrix (embedding lookup).
    pub fn row(&mut self, m: Var, idx: usize) -> Result<Var> {
        let mv = self.value(m);
        if mv.shape().len() != 2 || idx >= mv.rows() {
            return Err(Error::TokenOutOfRange {
                id: idx,
                size: mv.rows(),
            });
        }
        let value = RealArray::vector(mv.row(idx).to_vec());
        Ok(self.derived(value, Op::Row(m, idx), &[m]))
    }

    /// `Σ_j w[j] · m[j, :]`, each coordinate accumulated in sorted order so
    /// permuting the rows (together with the weights) gives identical bits.
    pub fn weighted_rows(&mut self, w: Var, m: Var) -> Result<Var> {
        let (wv, mv) = (self.value(w), self.value(m));
        if wv.shape().len() != 1 || mv.shape().len() != 2 || mv.rows() != wv.len() {
            return Err(Error::shape("weighted_rows", wv.shape(), mv.shape()));
        }
        let (rows, cols) = (mv.rows(), mv.cols());
        let mut terms = vec![0.0; rows];
        let mut out = Vec::with_capacity(cols);
        for d in 0..cols {
            for (j, t) in terms.iter_mut().enumerate() {
                *t = wv.data()[j] * mv.data()[j * cols + d];
            }
            out.push(sorted_sum(&mut terms));
        }
        Ok(self.derived(RealArray::vector(out), Op::WeightedRows(w, m), &[w, m]))
    }

    /// Reverse pass from a scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let rv = self.value(root);
        if !rv.is_scalar() {
            return Err(Error::NonScalarRoot(rv.shape().to_vec()));
        }
        let mut grads: Vec<Option<RealArray>> = vec![None; root.0 + 1];
        grads[root.0] = Some(RealArray::filled(rv.shape(), 1.0));

        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node<'a>, g: &RealArray, grads: &mut [Option<RealArray>]) {
        let gd = g.data();
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = av.as_lhs().expect("validated");
                let (_, n) = bv.as_rhs().expect("validated");
                self.accumulate(grads, *a, |da| {
                    for i in 0..m {
                        let grow = &gd[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bv.data()[p * n..(p + 1) * n];
                            da[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                });
                self.accumulate(grads, *b, |db| {
                    // aᵀ · g
                    let mut at = vec![0.0; k * m];
                    for i in 0..m {
                        for p in 0..k {
                            at[p * m + i] = av.data()[i * k + p];
                        }
                    }
                    matmul_into(&at, gd, db, k, m, n);
                });
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, |d| add_into(d, gd));
                self.accumulate(grads, *b, |d| add_into(d, gd));
            }
            Op::AddRows(m, v) => {
                self.accumulate(grads, *m, |d| add_into(d, gd));
                let cols = self.value(*v).len();
                self.accumulate(grads, *v, |d| {
                    for row in gd.chunks(cols) {
                        add_into(d, row);
                    }
                });
            }
            Op::AddN(vars) => {
                for v in vars {
                    self.accumulate(grads, *v, |d| add_into(d, gd));
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, |d| {
                    for ((x, &gi), &bi) in d.iter_mut().zip(gd).zip(bv) {
                        *x += gi * bi;
                    }
                });
                self.accumulate(grads, *b, |d| {
                    for ((x, &gi), &ai) in d.iter_mut().zip(gd).zip(av) {
                        *x += gi * ai;
                    }
                });
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, |d| {
                for (x, &gi) in d.iter_mut().zip(gd) {
                    *x += c * gi;
                }
            }),
            Op::Sigmoid(a) => self.accumulate(grads, *a, |d| {
                for ((x, &gi), &yi) in d.iter_mut().zip(gd).zip(y) {
                    *x += gi * yi * (1.0 - yi);
                }
            }),
            Op::Tanh(a) => self.accumulate(grads, *a, |d| {
                for ((x, &gi), &yi) in d.iter_mut().zip(gd).zip(y) {
                    *x += gi * (1.0 - yi * yi);
                }
            }),
            Op::Softmax(a) => {
                let dot: f64 = gd.iter().zip(y).map(|(g, y)| g * y).sum();
                self.accumulate(grads, *a, |d| {
                    for ((x, &gi), &yi) in d.iter_mut().zip(gd).zip(y) {
                        *x += yi * (gi - dot);
                    }
                });
            }
            Op::LogSoftmax(a) => {
                let total: f64 = gd.iter().sum();
                self.accumulate(grads, *a, |d| {
                    for ((x, &gi), &yi) in d.iter_mut().zip(gd).zip(y) {
                        *x += gi - yi.exp() * total;
                    }
                });
            }
            Op::Pick(a, idx) => self.accumulate(grads, *a, |d| d[*idx] += gd[0]),
            Op::Sum(a) => self.accumulate(grads, *a, |d| d.iter_mut().for_each(|x| *x += gd[0])),
            Op::MeanRows(m) => {
                let rows = self.value(*m).rows();
                let inv = 1.0 / rows as f64;
                self.accumulate(grads, *m, |d| {
                    for row in d.chunks_mut(gd.len()) {
                        for (x, &gi) in row.iter_mut().zip(gd) {
                            *x += gi * inv;
                        }
                    }
                });
            }
            Op::Row(m, idx) => {
                let cols = gd.len();
                self.accumulate(grads, *m, |d| add_into(&mut d[idx * cols..(idx + 1) * cols], gd));
            }
            Op::WeightedRows(w, m) => {
                let (wv, mv) = (self.value(*w).data(), self.value(*m).data());
                let cols = gd.len();
                self.accumulate(grads, *w, |d| {
                    for (j, x) in d.iter_mut().enumerate() {
                        *x += mv[j * cols..(j + 1) * cols].iter().zip(gd).map(|(a, b)| a * b).sum::<f64>();
                    }
                });
                self.accumulate(grads, *m, |d| {
                    for (j, row) in d.chunks_mut(cols).enumerate() {
                        for (x, &gi) in row.iter_mut().zip(gd) {
                            *x += wv[j] * gi;
                        }
                    }
                });
            }
        }
    }

    fn accumulate(&self, grads: &mut [Option<RealArray>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| RealArray::zeros(self.nodes[v.0].value.shape()));
        f(slot.data_mut());
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Softmax of a plain slice; exposed for code that works outside a graph.
pub fn softmax_values(xs: &[f64]) -> Vec<f64> {
    softmax(xs)
}

/// Log-softmax of a plain slice.
pub fn log_softmax_values(xs: &[f64]) -> Vec<f64> {
    log_softmax(xs)
}
