//! Append-only tape of dense-matrix operations with reverse-mode gradients.
//!
//! Every recorded node owns its forward value. Node ids are handed out in
//! recording order, so the tape is already topologically sorted and the
//! backward sweep is a single reverse pass.

use std::collections::HashMap;
use std::sync::Arc;

use ndarray::{s, Array2, Axis, Zip};

use super::param::{ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::graph::{Csr, SparseMatrix};

/// Shifted exponents below this are flushed to zero: `e^-700` is already
/// below the rounding of any sum that contains `e^0`, and smaller results
/// approach the subnormal range, where arithmetic is slow.
const EXP_FLUSH: f64 = -700.0;

/// `e^x` for the shifted logits `x ≤ 0` of a softmax, flushed to zero below
/// `EXP_FLUSH`.
pub fn softmax_exp(x: f64) -> f64 {
    if x < EXP_FLUSH {
        0.0
    } else {
        x.exp()
    }
}

pub type Matrix = Array2<f64>;

/// Per-entry aggregation weights for [`Tape::edge_aggregate`].
#[derive(Debug, Clone)]
pub enum EdgeWeights {
    Ones,
    /// Constant `nnz × 1` or `nnz × C` weights shared without copying.
    Fixed(Arc<Matrix>),
    /// Differentiable `nnz × 1` or `nnz × C` weights.
    Var(Var),
}

/// Handle to a node on a [`Tape`].
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
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    EdgeAggregate {
        pattern: Arc<Csr>,
        coef: Option<Arc<[f64]>>,
        weights: EdgeWeights,
        input: Var,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Exp(Var),
    Sigmoid(Var),
    Log(Var),
    RowSum(Var),
    ColSum(Var),
    Sum(Var),
    Mean(Var),
    LogSoftmaxRows(Var),
    CrossEntropyRows {
        logits: Var,
        rows: Arc<[usize]>,
        labels: Arc<[usize]>,
        softmax: Matrix,
    },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    GatherRows(Var, Arc<[usize]>),
    ScatterAddRows(Var, Arc<[usize]>),
    Broadcast(Var),
    SliceCols(Var, usize),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Tape::backward`] for inputs and parameters.
#[derive(Debug, Default)]
pub struct Gradients {
    inputs: HashMap<Var, Matrix>,
    params: HashMap<ParamId, Matrix>,
}

impl Gradients {
    /// Gradient with respect to a node created by [`Tape::input`] or [`Tape::param`].
    pub fn wrt(&self, var: Var) -> Option<&Matrix> {
        self.inputs.get(&var)
    }

    pub fn param(&self, id: ParamId) -> Option<&Matrix> {
        self.params.get(&id)
    }

    /// Adds every gradient owned by `store` into its accumulators.
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        for (&id, g) in &self.params {
            if store.owns(id) {
                store.get_mut(id).grad += g;
            }
        }
    }
}

fn shape_err(op: &'static str, lhs: (usize, usize), rhs: (usize, usize)) -> Error {
    Error::Shape { op, lhs, rhs }
}

/// Records a forward computation for one backward sweep.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
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

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    /// Value of a 1x1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.dim(), (1, 1));
        m[[0, 0]]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        let value = if value.is_standard_layout() {
            value
        } else {
            value.as_standard_layout().into_owned()
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// A leaf whose gradient is reported by [`Gradients::wrt`].
    pub fn input(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Input, true)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id), true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(shape_err("matmul", sa, sb));
        }
        let value = self.value(a).dot(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    /// Edge-weighted aggregation over a sparse pattern:
    /// `out[r, c] = Σ_{e in row r} (coef[e] · w[e, c]) · x[col(e), c]`.
    ///
    /// Weights are either `nnz × 1` (shared across channels) or `nnz × C`.
    /// A missing `coef` counts as ones.
    pub fn edge_aggregate(
        &mut self,
        pattern: &Arc<Csr>,
        coef: Option<&Arc<[f64]>>,
        weights: EdgeWeights,
        input: Var,
    ) -> Result<Var> {
        let (n, ch) = self.shape(input);
        let nnz = pattern.nnz();
        if pattern.n_cols() != n {
            return Err(shape_err(
                "edge_aggregate",
                (pattern.n_rows(), pattern.n_cols()),
                (n, ch),
            ));
        }
        if let Some(c) = coef {
            if c.len() != nnz {
                return Err(shape_err("edge_aggregate(coef)", (nnz, 1), (c.len(), 1)));
            }
        }
        if let Some(w) = self.weight_values(&weights) {
            let sw = w.dim();
            if sw.0 != nnz || (sw.1 != 1 && sw.1 != ch) {
                return Err(shape_err("edge_aggregate(weights)", sw, (nnz, ch)));
            }
        }

        let x = self.value(input).as_slice().expect("standard layout");
        let w = self
            .weight_values(&weights)
            .map(|w| (w.as_slice().expect("standard layout"), w.ncols()));
        let cols = pattern.indices();
        let mut out = Matrix::zeros((pattern.n_rows(), ch));
        {
            let out_s = out.as_slice_mut().expect("fresh array");
            for r in 0..pattern.n_rows() {
                let o = &mut out_s[r * ch..(r + 1) * ch];
                for e in pattern.row_range(r) {
                    let c0 = coef.map_or(1.0, |c| c[e]);
                    let xs = &x[cols[e] * ch..(cols[e] + 1) * ch];
                    match w {
                        None => o.iter_mut().zip(xs).for_each(|(o, &x)| *o += c0 * x),
                        Some((w, 1)) => {
                            let f = c0 * w[e];
                            o.iter_mut().zip(xs).for_each(|(o, &x)| *o += f * x)
                        }
                        Some((w, _)) => {
                            let ws = &w[e * ch..(e + 1) * ch];
                            for ((o, &x), &wv) in o.iter_mut().zip(xs).zip(ws) {
                                *o += (c0 * wv) * x;
                            }
                        }
                    }
                }
            }
        }
        let rg = self.rg(input) || matches!(weights, EdgeWeights::Var(w) if self.rg(w));
        Ok(self.push(
            out,
            Op::EdgeAggregate {
                pattern: Arc::clone(pattern),
                coef: coef.cloned(),
                weights,
                input,
            },
            rg,
        ))
    }

    fn weight_values<'a>(&'a self, weights: &'a EdgeWeights) -> Option<&'a Matrix> {
        match weights {
            EdgeWeights::Ones => None,
            EdgeWeights::Fixed(m) => Some(m),
            EdgeWeights::Var(v) => Some(self.value(*v)),
        }
    }

    /// Sparse-dense product with constant sparse values.
    pub fn spmm(&mut self, sparse: &SparseMatrix, input: Var) -> Result<Var> {
        let coef: Arc<[f64]> = sparse.values().into();
        self.edge_aggregate(sparse.pattern(), Some(&coef), EdgeWeights::Ones, input)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err(op, sa, sb));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self.value(a) + self.value(b);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = self.value(a) - self.value(b);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let value = self.value(a) * self.value(b);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    /// Adds a `1 × m` row vector to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(bias));
        if sb.0 != 1 || sb.1 != sa.1 {
            return Err(shape_err("add_row", sa, sb));
        }
        let value = self.value(a) + self.value(bias);
        let rg = self.rg(a) || self.rg(bias);
        Ok(self.push(value, Op::AddRow(a, bias), rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a) * factor;
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, factor), rg)
    }

    pub fn add_scalar(&mut self, a: Var, shift: f64) -> Var {
        let value = self.value(a) + shift;
        let rg = self.rg(a);
        self.push(value, Op::AddScalar(a), rg)
    }

    /// ReLU; the gradient at exactly zero is zero.
    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x.max(0.0));
        let rg = self.rg(a);
        self.push(value, Op::Relu(a), rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::exp);
        let rg = self.rg(a);
        self.push(value, Op::Exp(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| 1.0 / (1.0 + (-x).exp()));
        let rg = self.rg(a);
        self.push(value, Op::Sigmoid(a), rg)
    }

    pub fn log(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::ln);
        let rg = self.rg(a);
        self.push(value, Op::Log(a), rg)
    }

    /// `n × m → n × 1`.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let value = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        let rg = self.rg(a);
        self.push(value, Op::RowSum(a), rg)
    }

    /// `n × m → 1 × m`.
    pub fn col_sum(&mut self, a: Var) -> Var {
        let value = self.value(a).sum_axis(Axis(0)).insert_axis(Axis(0));
        let rg = self.rg(a);
        self.push(value, Op::ColSum(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::from_elem((1, 1), self.value(a).sum());
        let rg = self.rg(a);
        self.push(value, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let value = Matrix::from_elem((1, 1), m.sum() / m.len() as f64);
        let rg = self.rg(a);
        self.push(value, Op::Mean(a), rg)
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        for mut row in value.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            let lse = max + row.iter().map(|&x| softmax_exp(x - max)).sum::<f64>().ln();
            row.mapv_inplace(|x| x - lse);
        }
        let rg = self.rg(a);
        self.push(value, Op::LogSoftmaxRows(a), rg)
    }

    /// Mean over `rows` of `−log softmax(logits[r])[labels[i]]`, where
    /// `labels[i]` is the class of `rows[i]`.
    pub fn cross_entropy_rows(&mut self, logits: Var, rows: &Arc<[usize]>, labels: &Arc<[usize]>) -> Result<Var> {
        let (n, c) = self.shape(logits);
        if rows.len() != labels.len() || rows.is_empty() {
            return Err(shape_err("cross_entropy_rows", (rows.len(), 1), (labels.len(), 1)));
        }
        if rows.iter().any(|&r| r >= n) || labels.iter().any(|&y| y >= c) {
            return Err(shape_err("cross_entropy_rows", (n, c), (rows.len(), c)));
        }
        let x = self.value(logits);
        let mut softmax = Matrix::zeros((rows.len(), c));
        let mut total = 0.0;
        for (i, (&r, &y)) in rows.iter().zip(labels.iter()).enumerate() {
            let row = x.row(r);
            let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let mut out = softmax.row_mut(i);
            let mut z = 0.0;
            for (o, &v) in out.iter_mut().zip(row.iter()) {
                *o = softmax_exp(v - max);
                z += *o;
            }
            out /= z;
            total += max + z.ln() - row[y];
        }
        let value = Matrix::from_elem((1, 1), total / rows.len() as f64);
        let rg = self.rg(logits);
        Ok(self.push(
            value,
            Op::CrossEntropyRows {
                logits,
                rows: Arc::clone(rows),
                labels: Arc::clone(labels),
                softmax,
            },
            rg,
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat_rows of nothing".into()))?;
        let cols = self.shape(first).1;
        if let Some(&bad) = parts.iter().find(|&&p| self.shape(p).1 != cols) {
            return Err(shape_err("concat_rows", self.shape(first), self.shape(bad)));
        }
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(0), &views).expect("widths checked");
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat_cols of nothing".into()))?;
        let rows = self.shape(first).0;
        if let Some(&bad) = parts.iter().find(|&&p| self.shape(p).0 != rows) {
            return Err(shape_err("concat_cols", self.shape(first), self.shape(bad)));
        }
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("heights checked");
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// `out[i] = a[index[i]]`.
    pub fn gather_rows(&mut self, a: Var, index: &Arc<[usize]>) -> Result<Var> {
        let (n, m) = self.shape(a);
        if let Some(&bad) = index.iter().find(|&&i| i >= n) {
            return Err(shape_err("gather_rows", (n, m), (bad, m)));
        }
        let src = self.value(a);
        let mut value = Matrix::zeros((index.len(), m));
        for (mut row, &i) in value.rows_mut().into_iter().zip(index.iter()) {
            row.assign(&src.row(i));
        }
        let rg = self.rg(a);
        Ok(self.push(value, Op::GatherRows(a, Arc::clone(index)), rg))
    }

    /// `out[index[i]] += a[i]`, producing `n_out` rows.
    pub fn scatter_add_rows(&mut self, a: Var, index: &Arc<[usize]>, n_out: usize) -> Result<Var> {
        let (n, m) = self.shape(a);
        if index.len() != n {
            return Err(shape_err("scatter_add_rows", (n, m), (index.len(), m)));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= n_out) {
            return Err(shape_err("scatter_add_rows", (n_out, m), (bad, m)));
        }
        let src = self.value(a);
        let mut value = Matrix::zeros((n_out, m));
        for (row, &i) in src.rows().into_iter().zip(index.iter()) {
            let mut dst = value.row_mut(i);
            dst += &row;
        }
        let rg = self.rg(a);
        Ok(self.push(value, Op::ScatterAddRows(a, Arc::clone(index)), rg))
    }

    /// Explicit broadcast of a `1×1`, `1×c` or `r×1` node to `rows × cols`.
    pub fn broadcast(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let sa = self.shape(a);
        let ok = (sa.0 == 1 || sa.0 == rows) && (sa.1 == 1 || sa.1 == cols);
        if !ok {
            return Err(shape_err("broadcast", sa, (rows, cols)));
        }
        let value = self.value(a).broadcast((rows, cols)).expect("checked above").to_owned();
        let rg = self.rg(a);
        Ok(self.push(value, Op::Broadcast(a), rg))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let sa = self.shape(a);
        if start > end || end > sa.1 {
            return Err(shape_err("slice_cols", sa, (sa.0, end)));
        }
        let value = self.value(a).slice(s![.., start..end]).to_owned();
        let rg = self.rg(a);
        Ok(self.push(value, Op::SliceCols(a, start), rg))
    }

    /// Reverse sweep from a `1 × 1` loss node. A tape supports one sweep.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::Backward(
                "backward already ran on this tape; record a fresh tape".into(),
            ));
        }
        if self.shape(loss) != (1, 1) {
            return Err(Error::Backward(format!("loss must be 1x1, got {:?}", self.shape(loss))));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Matrix>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Matrix::ones((1, 1)));
        let mut out = Gradients::default();

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            match &node.op {
                Op::Constant => {}
                Op::Input => {
                    out.inputs.insert(Var(i), g);
                }
                Op::Param(id) => {
                    out.params.entry(*id).and_modify(|acc| *acc += &g).or_insert(g);
                }
                op => self.propagate(op, &node.value, g, &mut grads),
            }
        }
        Ok(out)
    }

    fn accumulate(&self, grads: &mut [Option<Matrix>], v: Var, delta: Matrix) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => *acc += &delta,
            slot => *slot = Some(delta),
        }
    }

    fn propagate(&self, op: &Op, out: &Matrix, g: Matrix, grads: &mut [Option<Matrix>]) {
        match *op {
            Op::Constant | Op::Input | Op::Param(_) => unreachable!("leaves handled by caller"),
            Op::MatMul(a, b) => {
                if self.rg(a) {
                    self.accumulate(grads, a, g.dot(&self.value(b).t()));
                }
                if self.rg(b) {
                    self.accumulate(grads, b, self.value(a).t().dot(&g));
                }
            }
            Op::EdgeAggregate {
                ref pattern,
                ref coef,
                ref weights,
                input,
            } => self.edge_aggregate_backward(pattern, coef.as_deref(), weights, input, &g, grads),
            Op::Add(a, b) => {
                if self.rg(b) {
                    self.accumulate(grads, b, g.clone());
                }
                self.accumulate(grads, a, g);
            }
            Op::Sub(a, b) => {
                if self.rg(b) {
                    self.accumulate(grads, b, -&g);
                }
                self.accumulate(grads, a, g);
            }
            Op::Mul(a, b) => {
                if self.rg(a) {
                    self.accumulate(grads, a, &g * self.value(b));
                }
                if self.rg(b) {
                    self.accumulate(grads, b, &g * self.value(a));
                }
            }
            Op::AddRow(a, bias) => {
                if self.rg(bias) {
                    self.accumulate(grads, bias, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                self.accumulate(grads, a, g);
            }
            Op::Scale(a, f) => self.accumulate(grads, a, g * f),
            Op::AddScalar(a) => self.accumulate(grads, a, g),
            Op::Relu(a) => {
                let mut d = g;
                Zip::from(&mut d).and(self.value(a)).for_each(|d, &x| {
                    if x <= 0.0 {
                        *d = 0.0
                    }
                });
                self.accumulate(grads, a, d);
            }
            Op::Exp(a) => self.accumulate(grads, a, g * out),
            Op::Sigmoid(a) => {
                let d = g * &out.mapv(|s| s * (1.0 - s));
                self.accumulate(grads, a, d);
            }
            Op::Log(a) => self.accumulate(grads, a, g / self.value(a)),
            Op::RowSum(a) => {
                let shape = self.shape(a);
                let d = g.broadcast(shape).expect("n x 1").to_owned();
                self.accumulate(grads, a, d);
            }
            Op::ColSum(a) => {
                let shape = self.shape(a);
                let d = g.broadcast(shape).expect("1 x m").to_owned();
                self.accumulate(grads, a, d);
            }
            Op::Sum(a) => {
                let d = Matrix::from_elem(self.shape(a), g[[0, 0]]);
                self.accumulate(grads, a, d);
            }
            Op::Mean(a) => {
                let shape = self.shape(a);
                let d = Matrix::from_elem(shape, g[[0, 0]] / (shape.0 * shape.1) as f64);
                self.accumulate(grads, a, d);
            }
            Op::LogSoftmaxRows(a) => {
                let softmax = out.mapv(softmax_exp);
                let gsum = g.sum_axis(Axis(1)).insert_axis(Axis(1));
                let d = &g - &(softmax * &gsum);
                self.accumulate(grads, a, d);
            }
            Op::CrossEntropyRows {
                logits,
                ref rows,
                ref labels,
                ref softmax,
            } => {
                let scale = g[[0, 0]] / rows.len() as f64;
                let mut d = Matrix::zeros(self.shape(logits));
                for (i, (&r, &y)) in rows.iter().zip(labels.iter()).enumerate() {
                    let mut dst = d.row_mut(r);
                    dst.scaled_add(scale, &softmax.row(i));
                    dst[y] -= scale;
                }
                self.accumulate(grads, logits, d);
            }
            Op::ConcatRows(ref parts) => {
                let mut start = 0;
                for &p in parts {
                    let rows = self.shape(p).0;
                    if self.rg(p) {
                        self.accumulate(grads, p, g.slice(s![start..start + rows, ..]).to_owned());
                    }
                    start += rows;
                }
            }
            Op::ConcatCols(ref parts) => {
                let mut start = 0;
                for &p in parts {
                    let cols = self.shape(p).1;
                    if self.rg(p) {
                        self.accumulate(grads, p, g.slice(s![.., start..start + cols]).to_owned());
                    }
                    start += cols;
                }
            }
            Op::GatherRows(a, ref index) => {
                let mut d = Matrix::zeros(self.shape(a));
                for (row, &i) in g.rows().into_iter().zip(index.iter()) {
                    let mut dst = d.row_mut(i);
                    dst += &row;
                }
                self.accumulate(grads, a, d);
            }
            Op::ScatterAddRows(a, ref index) => {
                let mut d = Matrix::zeros(self.shape(a));
                for (mut row, &i) in d.rows_mut().into_iter().zip(index.iter()) {
                    row.assign(&g.row(i));
                }
                self.accumulate(grads, a, d);
            }
            Op::Broadcast(a) => {
                let (r, c) = self.shape(a);
                let mut d = g;
                if r == 1 && d.nrows() != 1 {
                    d = d.sum_axis(Axis(0)).insert_axis(Axis(0));
                }
                if c == 1 && d.ncols() != 1 {
                    d = d.sum_axis(Axis(1)).insert_axis(Axis(1));
                }
                self.accumulate(grads, a, d);
            }
            Op::SliceCols(a, start) => {
                let mut d = Matrix::zeros(self.shape(a));
                d.slice_mut(s![.., start..start + g.ncols()]).assign(&g);
                self.accumulate(grads, a, d);
            }
        }
    }

    fn edge_aggregate_backward(
        &self,
        pattern: &Csr,
        coef: Option<&[f64]>,
        weights: &EdgeWeights,
        input: Var,
        g: &Matrix,
        grads: &mut [Option<Matrix>],
    ) {
        let (n, ch) = self.shape(input);
        let x = self.value(input).as_slice().expect("standard layout");
        let gs = g.as_slice().expect("standard layout");
        let cols = pattern.indices();
        let w = self
            .weight_values(weights)
            .map(|w| (w.as_slice().expect("standard layout"), w.ncols()));

        if self.rg(input) {
            let mut dx = Matrix::zeros((n, ch));
            let dxs = dx.as_slice_mut().expect("fresh array");
            for r in 0..pattern.n_rows() {
                let go = &gs[r * ch..(r + 1) * ch];
                for e in pattern.row_range(r) {
                    let c0 = coef.map_or(1.0, |c| c[e]);
                    let d = &mut dxs[cols[e] * ch..(cols[e] + 1) * ch];
                    match w {
                        None => d.iter_mut().zip(go).for_each(|(d, &g)| *d += c0 * g),
                        Some((w, 1)) => {
                            let f = c0 * w[e];
                            d.iter_mut().zip(go).for_each(|(d, &g)| *d += f * g)
                        }
                        Some((w, _)) => {
                            let ws = &w[e * ch..(e + 1) * ch];
                            for ((d, &g), &wv) in d.iter_mut().zip(go).zip(ws) {
                                *d += (c0 * wv) * g;
                            }
                        }
                    }
                }
            }
            self.accumulate(grads, input, dx);
        }

        if let EdgeWeights::Var(wv) = *weights {
            if !self.rg(wv) {
                return;
            }
            let k = self.shape(wv).1;
            let mut dw = Matrix::zeros((pattern.nnz(), k));
            let dws = dw.as_slice_mut().expect("fresh array");
            for r in 0..pattern.n_rows() {
                let go = &gs[r * ch..(r + 1) * ch];
                for e in pattern.row_range(r) {
                    let c0 = coef.map_or(1.0, |c| c[e]);
                    let xs = &x[cols[e] * ch..(cols[e] + 1) * ch];
                    if k == 1 {
                        let dot: f64 = xs.iter().zip(go).map(|(&x, &g)| x * g).sum();
                        dws[e] += c0 * dot;
                    } else {
                        for ((d, &x), &g) in dws[e * k..(e + 1) * k].iter_mut().zip(xs).zip(go) {
                            *d += c0 * x * g;
                        }
                    }
                }
            }
            self.accumulate(grads, wv, dw);
        }
    }
}
