//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! Nodes are appended in evaluation order, so the tape is already a
//! topological order and the backward pass is a single reverse sweep.
//! Every forward op checks its output for NaN/Inf and fails with
//! [`Error::NumericFault`] instead of propagating.

use super::params::{ParamId, ParamStore};
use super::tensor::{gemm, Strided, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Constant,
    Variable,
    Param(ParamId),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Recip(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    SegmentMax(Var, Vec<usize>),
    Huber(Var, f64),
    Bce(Var, Tensor),
    BceLogits(Var, Tensor),
    Sum(Var),
    RowSum(Var),
}

struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn check_matrix(t: &Tensor, what: &str) -> Result<()> {
    if t.is_matrix() {
        Ok(())
    } else {
        Err(Error::structural(format!("{what}: expected a matrix, got shape {:?}", t.shape())))
    }
}

impl Graph {
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

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, op: Op, value: Tensor, needs_grad: bool, name: &str) -> Result<Var> {
        if !value.all_finite() {
            let bad = value.data().iter().filter(|v| !v.is_finite()).count();
            return Err(Error::NumericFault {
                op: name.to_string(),
                detail: format!("{bad} non-finite values in output of shape {:?}", value.shape()),
            });
        }
        self.nodes.push(Node { op, value, needs_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A leaf that never receives gradient.
    pub fn constant(&mut self, t: Tensor) -> Result<Var> {
        self.push(Op::Constant, t, false, "constant")
    }

    /// A leaf whose gradient is reported by [`Graph::backward`].
    pub fn variable(&mut self, t: Tensor) -> Result<Var> {
        self.push(Op::Variable, t, true, "variable")
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Result<Var> {
        self.push(Op::Param(id), store.get(id).clone(), true, "param")
    }

    fn binary_same_shape(&self, a: Var, b: Var, name: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::structural(format!(
                "{name}: shapes {:?} and {:?} differ",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::MatMul(a, b), out, ng, "matmul")
    }

    /// Adds a `[1, n]` (or `[n]`) bias to every row of `[m, n]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let xv = self.value(x);
        let bv = self.value(bias);
        check_matrix(xv, "add_bias")?;
        if bv.len() != xv.cols() {
            return Err(Error::structural(format!(
                "add_bias: bias of {} values for {} columns",
                bv.len(),
                xv.cols()
            )));
        }
        let mut out = xv.clone();
        let n = xv.cols();
        let b = bv.data();
        for row in out.data_mut().chunks_mut(n) {
            for (o, bb) in row.iter_mut().zip(b) {
                *o += bb;
            }
        }
        let ng = self.needs(x) || self.needs(bias);
        self.push(Op::AddBias(x, bias), out, ng, "add_bias")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "add")?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::Add(a, b), out, ng, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "sub")?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::Sub(a, b), out, ng, "sub")
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "mul")?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::Mul(a, b), out, ng, "mul")
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var> {
        let out = self.value(a).map(|x| x * k);
        let ng = self.needs(a);
        self.push(Op::Scale(a, k), out, ng, "scale")
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Result<Var> {
        let out = self.value(a).map(|x| x + k);
        let ng = self.needs(a);
        self.push(Op::AddScalar(a), out, ng, "add_scalar")
    }

    fn unary(&mut self, a: Var, op: Op, name: &str, f: impl Fn(f64) -> f64) -> Result<Var> {
        let out = self.value(a).map(f);
        let ng = self.needs(a);
        self.push(op, out, ng, name)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Relu(a), "relu", |x| x.max(0.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Sigmoid(a), "sigmoid", sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Tanh(a), "tanh", f64::tanh)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Exp(a), "exp", f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if self.value(a).data().iter().any(|&x| x <= 0.0) {
            return Err(Error::domain("log of a non-positive value"));
        }
        self.unary(a, Op::Log(a), "log", f64::ln)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Square(a), "square", |x| x * x)
    }

    pub fn recip(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Recip(a), "recip", |x| 1.0 / x)
    }

    /// Concatenates matrices with equal row counts along the column axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(first) = parts.first() else {
            return Err(Error::structural("concat_cols of nothing"));
        };
        let rows = self.value(*first).rows();
        let mut total = 0;
        for &p in parts {
            let v = self.value(p);
            check_matrix(v, "concat_cols")?;
            if v.rows() != rows {
                return Err(Error::structural(format!(
                    "concat_cols: row counts {rows} and {}",
                    v.rows()
                )));
            }
            total += v.cols();
        }
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let out = Tensor::matrix(rows, total, data)?;
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(Op::ConcatCols(parts.to_vec()), out, ng, "concat_cols")
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let v = self.value(a);
        check_matrix(v, "slice_cols")?;
        if start >= end || end > v.cols() {
            return Err(Error::structural(format!(
                "slice_cols {start}..{end} of {} columns",
                v.cols()
            )));
        }
        let rows = v.rows();
        let mut data = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            data.extend_from_slice(&v.row(r)[start..end]);
        }
        let out = Tensor::matrix(rows, end - start, data)?;
        let ng = self.needs(a);
        self.push(Op::SliceCols(a, start), out, ng, "slice_cols")
    }

    /// Max over consecutive groups of `group` rows: `[g * group, c] -> [g, c]`.
    ///
    /// This is the point-axis pooling of a shared point MLP when a batch of
    /// clouds is stacked row-wise. The winning row of every output element is
    /// recorded and gradient is routed only there.
    pub fn segment_max(&mut self, a: Var, group: usize) -> Result<Var> {
        let v = self.value(a);
        check_matrix(v, "segment_max")?;
        if group == 0 || v.rows() % group != 0 {
            return Err(Error::structural(format!(
                "segment_max: {} rows not divisible into groups of {group}",
                v.rows()
            )));
        }
        let c = v.cols();
        let groups = v.rows() / group;
        let mut out = vec![f64::NEG_INFINITY; groups * c];
        let mut argmax = vec![0usize; groups * c];
        for g in 0..groups {
            let o = &mut out[g * c..(g + 1) * c];
            let am = &mut argmax[g * c..(g + 1) * c];
            for r in g * group..(g + 1) * group {
                for (j, &x) in v.row(r).iter().enumerate() {
                    if x > o[j] {
                        o[j] = x;
                        am[j] = r;
                    }
                }
            }
        }
        let out = Tensor::matrix(groups, c, out)?;
        let ng = self.needs(a);
        self.push(Op::SegmentMax(a, argmax), out, ng, "segment_max")
    }

    /// Elementwise Huber penalty `0.5 x^2` inside `|x| <= delta`, linear outside.
    pub fn huber(&mut self, a: Var, delta: f64) -> Result<Var> {
        if !(delta > 0.0) {
            return Err(Error::domain("huber delta must be positive"));
        }
        self.unary(a, Op::Huber(a, delta), "huber", |x| huber(x, delta))
    }

    /// Elementwise binary cross-entropy of probabilities `p` against `target`.
    pub fn bce(&mut self, p: Var, target: Tensor) -> Result<Var> {
        if self.value(p).shape() != target.shape() {
            return Err(Error::structural("bce: target shape differs"));
        }
        if self.value(p).data().iter().any(|&x| !(0.0..=1.0).contains(&x)) {
            return Err(Error::domain("bce: probabilities must lie in [0, 1]"));
        }
        let out = self.value(p).zip_map(&target, |x, t| {
            -(t * x.max(1e-300).ln() + (1.0 - t) * (1.0 - x).max(1e-300).ln())
        });
        let ng = self.needs(p);
        self.push(Op::Bce(p, target), out, ng, "bce")
    }

    /// Binary cross-entropy on logits, computed stably.
    pub fn bce_with_logits(&mut self, logits: Var, target: Tensor) -> Result<Var> {
        if self.value(logits).shape() != target.shape() {
            return Err(Error::structural("bce_with_logits: target shape differs"));
        }
        let out = self
            .value(logits)
            .zip_map(&target, |x, t| x.max(0.0) - x * t + (-x.abs()).exp().ln_1p());
        let ng = self.needs(logits);
        self.push(Op::BceLogits(logits, target), out, ng, "bce_with_logits")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(a).sum());
        let ng = self.needs(a);
        self.push(Op::Sum(a), out, ng, "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        if n == 0 {
            return Err(Error::structural("mean of an empty tensor"));
        }
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n as f64)
    }

    /// Sum along columns: `[m, n] -> [m, 1]`.
    pub fn row_sum(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        check_matrix(v, "row_sum")?;
        let data: Vec<f64> = (0..v.rows()).map(|r| v.row(r).iter().sum()).collect();
        let out = Tensor::matrix(v.rows(), 1, data)?;
        let ng = self.needs(a);
        self.push(Op::RowSum(a), out, ng, "row_sum")
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::structural(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                grads[i] = None;
                continue;
            }
            let is_leaf = matches!(node.op, Op::Variable | Op::Param(_));
            let Some(g) = (if is_leaf { grads[i].as_ref().cloned() } else { grads[i].take() }) else {
                continue;
            };
            self.propagate(i, &g, &mut grads)?;
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.needs(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[i];
        let out = &node.value;
        match &node.op {
            Op::Constant | Op::Variable | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if self.needs(*a) {
                    let mut ga = Tensor::zeros(&[m, k]);
                    gemm(
                        m,
                        n,
                        k,
                        Strided::row_major(g.data(), n),
                        Strided::transposed(bv.data(), n),
                        ga.data_mut(),
                        0.0,
                    );
                    self.accumulate(grads, *a, ga);
                }
                if self.needs(*b) {
                    let mut gb = Tensor::zeros(&[k, n]);
                    gemm(
                        k,
                        m,
                        n,
                        Strided::transposed(av.data(), k),
                        Strided::row_major(g.data(), n),
                        gb.data_mut(),
                        0.0,
                    );
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::AddBias(x, b) => {
                if self.needs(*b) {
                    let n = g.cols();
                    let mut gb = vec![0.0; n];
                    for row in g.data().chunks(n) {
                        for (acc, v) in gb.iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                    let shape = self.value(*b).shape().to_vec();
                    self.accumulate(grads, *b, Tensor::new(shape, gb)?);
                }
                self.accumulate(grads, *x, g.clone());
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                if self.needs(*b) {
                    self.accumulate(grads, *b, g.map(|x| -x));
                }
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    self.accumulate(grads, *a, g.zip_map(self.value(*b), |x, y| x * y));
                }
                if self.needs(*b) {
                    self.accumulate(grads, *b, g.zip_map(self.value(*a), |x, y| x * y));
                }
            }
            Op::Scale(a, k) => self.accumulate(grads, *a, g.map(|x| x * k)),
            Op::AddScalar(a) => self.accumulate(grads, *a, g.clone()),
            Op::Relu(a) => {
                let ga = g.zip_map(self.value(*a), |gx, x| if x > 0.0 { gx } else { 0.0 });
                self.accumulate(grads, *a, ga);
            }
            Op::Sigmoid(a) => self.accumulate(grads, *a, g.zip_map(out, |gx, s| gx * s * (1.0 - s))),
            Op::Tanh(a) => self.accumulate(grads, *a, g.zip_map(out, |gx, t| gx * (1.0 - t * t))),
            Op::Exp(a) => self.accumulate(grads, *a, g.zip_map(out, |gx, e| gx * e)),
            Op::Log(a) => self.accumulate(grads, *a, g.zip_map(self.value(*a), |gx, x| gx / x)),
            Op::Square(a) => {
                self.accumulate(grads, *a, g.zip_map(self.value(*a), |gx, x| 2.0 * gx * x))
            }
            Op::Recip(a) => self.accumulate(grads, *a, g.zip_map(out, |gx, r| -gx * r * r)),
            Op::ConcatCols(parts) => {
                let rows = g.rows();
                let total = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let c = self.value(p).cols();
                    if self.needs(p) {
                        let mut data = Vec::with_capacity(rows * c);
                        for r in 0..rows {
                            data.extend_from_slice(&g.data()[r * total + offset..r * total + offset + c]);
                        }
                        self.accumulate(grads, p, Tensor::matrix(rows, c, data)?);
                    }
                    offset += c;
                }
            }
            Op::SliceCols(a, start) => {
                let av = self.value(*a);
                let (rows, cols) = (av.rows(), av.cols());
                let w = g.cols();
                let mut ga = Tensor::zeros(&[rows, cols]);
                for r in 0..rows {
                    ga.data_mut()[r * cols + start..r * cols + start + w].copy_from_slice(g.row(r));
                }
                self.accumulate(grads, *a, ga);
            }
            Op::SegmentMax(a, argmax) => {
                let av = self.value(*a);
                let c = av.cols();
                let mut ga = Tensor::zeros(av.shape());
                for (idx, (&src, &gv)) in argmax.iter().zip(g.data()).enumerate() {
                    ga.data_mut()[src * c + idx % c] += gv;
                }
                self.accumulate(grads, *a, ga);
            }
            Op::Huber(a, delta) => {
                let d = *delta;
                let ga = g.zip_map(self.value(*a), |gx, x| gx * x.clamp(-d, d));
                self.accumulate(grads, *a, ga);
            }
            Op::Bce(p, target) => {
                let pv = self.value(*p);
                let mut ga = Tensor::zeros(pv.shape());
                for (j, o) in ga.data_mut().iter_mut().enumerate() {
                    let x = pv.data()[j].clamp(1e-12, 1.0 - 1e-12);
                    let t = target.data()[j];
                    *o = g.data()[j] * (x - t) / (x * (1.0 - x));
                }
                self.accumulate(grads, *p, ga);
            }
            Op::BceLogits(a, target) => {
                let av = self.value(*a);
                let mut ga = Tensor::zeros(av.shape());
                for (j, o) in ga.data_mut().iter_mut().enumerate() {
                    *o = g.data()[j] * (sigmoid(av.data()[j]) - target.data()[j]);
                }
                self.accumulate(grads, *a, ga);
            }
            Op::Sum(a) => {
                let gv = g.item();
                self.accumulate(grads, *a, Tensor::full(self.value(*a).shape(), gv));
            }
            Op::RowSum(a) => {
                let av = self.value(*a);
                let c = av.cols();
                let mut ga = Tensor::zeros(av.shape());
                for (r, row) in ga.data_mut().chunks_mut(c).enumerate() {
                    row.iter_mut().for_each(|v| *v = g.data()[r]);
                }
                self.accumulate(grads, *a, ga);
            }
        }
        Ok(())
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn huber(x: f64, delta: f64) -> f64 {
    let a = x.abs();
    if a <= delta {
        0.5 * x * x
    } else {
        delta * (a - 0.5 * delta)
    }
}

/// Result of a backward sweep.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of a variable or parameter node; `None` when nothing flowed into it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Sums parameter gradients into `out`, indexed like the store.
    pub fn accumulate_params(&self, graph: &Graph, out: &mut [Tensor]) {
        for (i, node) in graph.nodes.iter().enumerate() {
            if let (Op::Param(id), Some(g)) = (&node.op, self.grads.get(i).and_then(Option::as_ref)) {
                out[id.index()].add_assign(g);
            }
        }
    }
}
