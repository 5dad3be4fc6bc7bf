//! Minimal reverse-mode automatic differentiation.
//!
//! A [`Tape`] records operations in execution order. Each operation checks
//! shapes when it is recorded and rejects non-finite results, naming the
//! node. [`Tape::backward`] walks the nodes once in reverse order and returns
//! the adjoints of every parameter leaf.
//!
//! The operation set is exactly what the dual-update forward pass needs:
//! affine layers, rectifiers, column concatenation, products with a fixed
//! binary incidence matrix, elementwise arithmetic, grouped softmin, max
//! reductions and per-group normalization.

mod tensor;

use std::collections::BTreeMap;
use std::sync::Arc;

use thiserror::Error;

pub use tensor::Tensor;

use crate::sparse::Incidence;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TapeError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("non-finite value produced by node {node} ({op})")]
    NonFinite { node: usize, op: &'static str },
    #[error("loss node {node} is not a scalar (shape {rows}x{cols})")]
    NotScalar { node: usize, rows: usize, cols: usize },
    #[error("node {0} does not belong to this tape")]
    UnknownNode(usize),
}

/// Handle to a node of a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Contiguous groups over the rows of a column vector, with an optional
/// activity mask. Inactive rows are excluded from their group.
#[derive(Debug, Clone, PartialEq)]
pub struct Segments {
    offsets: Vec<usize>,
    active: Option<Vec<bool>>,
}

impl Segments {
    /// `offsets` has one entry per group boundary, starting at 0.
    pub fn new(offsets: Vec<usize>) -> Self {
        assert!(!offsets.is_empty() && offsets[0] == 0);
        assert!(offsets.windows(2).all(|w| w[0] <= w[1]));
        Self { offsets, active: None }
    }

    pub fn with_mask(mut self, active: Vec<bool>) -> Self {
        assert_eq!(active.len(), self.len());
        self.active = Some(active);
        self
    }

    /// Number of rows covered.
    pub fn len(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_groups(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn group(&self, g: usize) -> std::ops::Range<usize> {
        self.offsets[g]..self.offsets[g + 1]
    }

    pub fn is_active(&self, i: usize) -> bool {
        self.active.as_ref().is_none_or(|a| a[i])
    }

    /// True when some row of group `g` is active.
    pub fn group_active(&self, g: usize) -> bool {
        self.group(g).any(|i| self.is_active(i))
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Affine { x: Var, w: Var, b: Var },
    Relu(Var),
    ConcatCols(Vec<Var>),
    SparseMul { mat: Arc<Incidence>, transpose: bool, x: Var },
    Mul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    SoftminRows { x: Var, temperature: f64 },
    SoftminSegments { x: Var, segments: Arc<Segments>, temperature: f64 },
    MaxReduce { x: Var, argmax: usize },
    SumRows(Var),
    RepeatRows(Var),
    RowMax { x: Var, argmax: Vec<Option<usize>> },
    NormalizeSegments { x: Var, segments: Arc<Segments>, reset: Vec<bool> },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Affine { .. } => "affine",
            Op::Relu(_) => "relu",
            Op::ConcatCols(_) => "concat_cols",
            Op::SparseMul { .. } => "sparse_matmul",
            Op::Mul(..) => "elementwise_mul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Div(..) => "div",
            Op::Scale(..) => "scale",
            Op::SoftminRows { .. } => "softmin_rows",
            Op::SoftminSegments { .. } => "softmin_segments",
            Op::MaxReduce { .. } => "max_reduce",
            Op::SumRows(_) => "sum_rows",
            Op::RepeatRows(_) => "repeat_rows",
            Op::RowMax { .. } => "row_max",
            Op::NormalizeSegments { .. } => "normalize_segments",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
    param: bool,
}

/// Adjoints of the parameter leaves, keyed by handle.
#[derive(Debug, Default, Clone)]
pub struct Gradients {
    grads: BTreeMap<Var, Tensor>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(&v)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Var, &Tensor)> {
        self.grads.iter()
    }
}

/// Append-only record of a computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape_err(op: &'static str, detail: String) -> TapeError {
    TapeError::Shape { op, detail }
}

/// Numerically stable `softmax(-x / τ)` over the given indices of `x`.
fn softmin_into(x: &[f64], idx: impl Iterator<Item = usize> + Clone, temperature: f64, out: &mut [f64]) {
    let min = idx.clone().map(|i| x[i]).fold(f64::INFINITY, f64::min);
    if !min.is_finite() {
        return;
    }
    let mut sum = 0.0;
    for i in idx.clone() {
        let e = (-(x[i] - min) / temperature).exp();
        out[i] = e;
        sum += e;
    }
    for i in idx {
        out[i] /= sum;
    }
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

    /// Trainable leaf; its adjoint is reported by [`Tape::backward`].
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
            param: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Non-differentiable leaf.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
            param: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn check(&self, v: Var) -> Result<(), TapeError> {
        if v.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(TapeError::UnknownNode(v.0))
        }
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var, TapeError> {
        let node = self.nodes.len();
        if !value.is_finite() {
            return Err(TapeError::NonFinite { node, op: op.name() });
        }
        let needs_grad = inputs.iter().any(|&v| self.needs(v));
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            param: false,
        });
        Ok(Var(node))
    }

    /// `x W + b` for `x: n×i`, `W: i×o`, `b: 1×o`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var, TapeError> {
        for v in [x, w, b] {
            self.check(v)?;
        }
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        if xv.cols != wv.rows || bv.rows != 1 || bv.cols != wv.cols {
            return Err(shape_err(
                "affine",
                format!("x {:?}, W {:?}, b {:?}", xv.shape(), wv.shape(), bv.shape()),
            ));
        }
        let (n, k, o) = (xv.rows, xv.cols, wv.cols);
        let mut out = Vec::with_capacity(n * o);
        for i in 0..n {
            out.extend_from_slice(&bv.data);
            let row = &mut out[i * o..(i + 1) * o];
            for (kk, &xik) in xv.row(i).iter().enumerate().take(k) {
                if xik != 0.0 {
                    for (r, &wv) in row.iter_mut().zip(wv.row(kk)) {
                        *r += xik * wv;
                    }
                }
            }
        }
        self.push(Tensor::new(n, o, out), Op::Affine { x, w, b }, &[x, w, b])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, TapeError> {
        self.check(x)?;
        let xv = self.value(x);
        let out = Tensor::new(xv.rows, xv.cols, xv.data.iter().map(|&v| v.max(0.0)).collect());
        self.push(out, Op::Relu(x), &[x])
    }

    pub fn concat_cols(&mut self, xs: &[Var]) -> Result<Var, TapeError> {
        if xs.is_empty() {
            return Err(shape_err("concat_cols", "no inputs".into()));
        }
        for &v in xs {
            self.check(v)?;
        }
        let rows = self.value(xs[0]).rows;
        if let Some(&bad) = xs.iter().find(|&&v| self.value(v).rows != rows) {
            return Err(shape_err(
                "concat_cols",
                format!("row counts {} and {}", rows, self.value(bad).rows),
            ));
        }
        let cols: usize = xs.iter().map(|&v| self.value(v).cols).sum();
        let mut out = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for &v in xs {
                out.extend_from_slice(self.value(v).row(i));
            }
        }
        self.push(Tensor::new(rows, cols, out), Op::ConcatCols(xs.to_vec()), xs)
    }

    /// `A x` (or `Aᵀ x`) with a constant binary incidence matrix `A`.
    pub fn sparse_matmul(&mut self, mat: &Arc<Incidence>, transpose: bool, x: Var) -> Result<Var, TapeError> {
        self.check(x)?;
        let xv = self.value(x);
        let (in_rows, out_rows) = if transpose {
            (mat.n_rows(), mat.n_cols())
        } else {
            (mat.n_cols(), mat.n_rows())
        };
        if xv.rows != in_rows {
            return Err(shape_err(
                "sparse_matmul",
                format!(
                    "matrix {}x{} (transpose {transpose}) against x {:?}",
                    mat.n_rows(),
                    mat.n_cols(),
                    xv.shape()
                ),
            ));
        }
        let data = if transpose {
            mat.tmul(&xv.data, xv.cols)
        } else {
            mat.mul(&xv.data, xv.cols)
        };
        let out = Tensor::new(out_rows, xv.cols, data);
        self.push(
            out,
            Op::SparseMul {
                mat: Arc::clone(mat),
                transpose,
                x,
            },
            &[x],
        )
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var, TapeError> {
        self.check(a)?;
        self.check(b)?;
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err(name, format!("{:?} vs {:?}", av.shape(), bv.shape())));
        }
        let out = Tensor::new(
            av.rows,
            av.cols,
            av.data.iter().zip(&bv.data).map(|(&x, &y)| f(x, y)).collect(),
        );
        self.push(out, op, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TapeError> {
        self.binary(a, b, "elementwise_mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TapeError> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TapeError> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, TapeError> {
        self.binary(a, b, "div", |x, y| x / y, Op::Div(a, b))
    }

    pub fn scale(&mut self, x: Var, alpha: f64) -> Result<Var, TapeError> {
        self.check(x)?;
        let xv = self.value(x);
        let out = Tensor::new(xv.rows, xv.cols, xv.data.iter().map(|v| v * alpha).collect());
        self.push(out, Op::Scale(x, alpha), &[x])
    }

    /// Row-wise `y_i = e^{-x_i/τ} / Σ_j e^{-x_j/τ}`.
    pub fn softmin_rows(&mut self, x: Var, temperature: f64) -> Result<Var, TapeError> {
        self.check(x)?;
        if !(temperature > 0.0) {
            return Err(shape_err("softmin_rows", format!("temperature {temperature}")));
        }
        let xv = self.value(x);
        let mut out = vec![0.0; xv.len()];
        for i in 0..xv.rows {
            let base = i * xv.cols;
            softmin_into(&xv.data, base..base + xv.cols, temperature, &mut out);
        }
        let out = Tensor::new(xv.rows, xv.cols, out);
        self.push(out, Op::SoftminRows { x, temperature }, &[x])
    }

    /// Softmin within each group of a column vector. Inactive rows get 0 and
    /// a group with no active rows is all zero.
    pub fn softmin_segments(&mut self, x: Var, segments: &Arc<Segments>, temperature: f64) -> Result<Var, TapeError> {
        self.check(x)?;
        let xv = self.value(x);
        if xv.cols != 1 || xv.rows != segments.len() {
            return Err(shape_err(
                "softmin_segments",
                format!("x {:?} for {} grouped rows", xv.shape(), segments.len()),
            ));
        }
        if !(temperature > 0.0) {
            return Err(shape_err("softmin_segments", format!("temperature {temperature}")));
        }
        let mut out = vec![0.0; xv.rows];
        for g in 0..segments.num_groups() {
            let idx = segments.group(g).filter(|&i| segments.is_active(i));
            softmin_into(&xv.data, idx, temperature, &mut out);
        }
        let out = Tensor::column(out);
        self.push(
            out,
            Op::SoftminSegments {
                x,
                segments: Arc::clone(segments),
                temperature,
            },
            &[x],
        )
    }

    /// Maximum over all entries as a `1×1` tensor. The gradient goes to the
    /// first index attaining the maximum.
    pub fn max_reduce(&mut self, x: Var) -> Result<Var, TapeError> {
        self.check(x)?;
        let xv = self.value(x);
        if xv.is_empty() {
            return Err(shape_err("max_reduce", "empty input".into()));
        }
        let mut argmax = 0;
        for (i, &v) in xv.data.iter().enumerate() {
            if v > xv.data[argmax] {
                argmax = i;
            }
        }
        let out = Tensor::scalar(xv.data[argmax]);
        self.push(out, Op::MaxReduce { x, argmax }, &[x])
    }

    /// Column sums as a `1×cols` tensor.
    pub fn sum_rows(&mut self, x: Var) -> Result<Var, TapeError> {
        self.check(x)?;
        let xv = self.value(x);
        let mut out = vec![0.0; xv.cols];
        for i in 0..xv.rows {
            for (o, v) in out.iter_mut().zip(xv.row(i)) {
                *o += v;
            }
        }
        let out = Tensor::new(1, xv.cols, out);
        self.push(out, Op::SumRows(x), &[x])
    }

    /// Stacks a `1×c` row `n` times.
    pub fn repeat_rows(&mut self, x: Var, n: usize) -> Result<Var, TapeError> {
        self.check(x)?;
        let xv = self.value(x);
        if xv.rows != 1 {
            return Err(shape_err("repeat_rows", format!("input {:?} is not a row", xv.shape())));
        }
        let mut out = Vec::with_capacity(n * xv.cols);
        for _ in 0..n {
            out.extend_from_slice(&xv.data);
        }
        let out = Tensor::new(n, xv.cols, out);
        self.push(out, Op::RepeatRows(x), &[x])
    }

    /// For each row of `mat`, the maximum of the column vector `x` over that
    /// row's columns (0 for an empty row). The index attaining it is returned
    /// alongside for callers that need it.
    pub fn row_max(&mut self, mat: &Arc<Incidence>, x: Var) -> Result<(Var, Vec<Option<usize>>), TapeError> {
        self.check(x)?;
        let xv = self.value(x);
        if xv.cols != 1 || xv.rows != mat.n_cols() {
            return Err(shape_err(
                "row_max",
                format!("x {:?} against {} columns", xv.shape(), mat.n_cols()),
            ));
        }
        let mut out = Vec::with_capacity(mat.n_rows());
        let mut argmax = Vec::with_capacity(mat.n_rows());
        for row in mat.rows() {
            let best = row.iter().copied().reduce(|a, b| if xv.data[b] > xv.data[a] { b } else { a });
            out.push(best.map_or(0.0, |j| xv.data[j]));
            argmax.push(best);
        }
        let v = self.push(
            Tensor::column(out),
            Op::RowMax {
                x,
                argmax: argmax.clone(),
            },
            &[x],
        )?;
        Ok((v, argmax))
    }

    /// Divides each active row by its group sum. A group whose sum is not
    /// positive is reset to uniform over its active rows (no gradient flows
    /// through a reset group). Inactive rows become 0.
    pub fn normalize_segments(&mut self, x: Var, segments: &Arc<Segments>) -> Result<Var, TapeError> {
        self.check(x)?;
        let xv = self.value(x);
        if xv.cols != 1 || xv.rows != segments.len() {
            return Err(shape_err(
                "normalize_segments",
                format!("x {:?} for {} grouped rows", xv.shape(), segments.len()),
            ));
        }
        let mut out = vec![0.0; xv.rows];
        let mut reset = vec![false; segments.num_groups()];
        for g in 0..segments.num_groups() {
            let active: Vec<usize> = segments.group(g).filter(|&i| segments.is_active(i)).collect();
            if active.is_empty() {
                continue;
            }
            let sum: f64 = active.iter().map(|&i| xv.data[i]).sum();
            if sum > 1e-12 {
                for &i in &active {
                    out[i] = xv.data[i] / sum;
                }
            } else {
                reset[g] = true;
                for &i in &active {
                    out[i] = 1.0 / active.len() as f64;
                }
            }
        }
        self.push(
            Tensor::column(out),
            Op::NormalizeSegments {
                x,
                segments: Arc::clone(segments),
                reset,
            },
            &[x],
        )
    }

    /// Reverse pass from a scalar node. Returns the adjoint of every
    /// parameter leaf the loss depends on (zero tensors for the rest).
    pub fn backward(&self, loss: Var) -> Result<Gradients, TapeError> {
        self.check(loss)?;
        let lv = self.value(loss);
        if lv.shape() != (1, 1) {
            return Err(TapeError::NotScalar {
                node: loss.0,
                rows: lv.rows,
                cols: lv.cols,
            });
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = adj[idx].take() else { continue };
            if node.param {
                adj[idx] = Some(g);
                continue;
            }
            self.propagate(node, &g, &mut adj);
        }
        let mut grads = BTreeMap::new();
        for (i, node) in self.nodes.iter().enumerate().take(loss.0 + 1) {
            if node.param {
                let g = adj[i]
                    .take()
                    .unwrap_or_else(|| Tensor::zeros(node.value.rows, node.value.cols));
                grads.insert(Var(i), g);
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, adj: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.needs(v) {
            return;
        }
        match &mut adj[v.0] {
            Some(a) => a.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, adj: &mut [Option<Tensor>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Affine { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (n, k, o) = (xv.rows, xv.cols, wv.cols);
                if self.needs(*x) {
                    let mut dx = vec![0.0; n * k];
                    for i in 0..n {
                        let gi = g.row(i);
                        for kk in 0..k {
                            dx[i * k + kk] = gi.iter().zip(wv.row(kk)).map(|(a, b)| a * b).sum();
                        }
                    }
                    self.accumulate(adj, *x, Tensor::new(n, k, dx));
                }
                if self.needs(*w) {
                    let mut dw = vec![0.0; k * o];
                    for i in 0..n {
                        let gi = g.row(i);
                        for (kk, &xik) in xv.row(i).iter().enumerate() {
                            if xik != 0.0 {
                                for (d, &gv) in dw[kk * o..(kk + 1) * o].iter_mut().zip(gi) {
                                    *d += xik * gv;
                                }
                            }
                        }
                    }
                    self.accumulate(adj, *w, Tensor::new(k, o, dw));
                }
                if self.needs(*b) {
                    let mut db = vec![0.0; o];
                    for i in 0..n {
                        for (d, gv) in db.iter_mut().zip(g.row(i)) {
                            *d += gv;
                        }
                    }
                    self.accumulate(adj, *b, Tensor::new(1, o, db));
                }
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                let d = xv
                    .data
                    .iter()
                    .zip(&g.data)
                    .map(|(&v, &gv)| if v > 0.0 { gv } else { 0.0 })
                    .collect();
                self.accumulate(adj, *x, Tensor::new(xv.rows, xv.cols, d));
            }
            Op::ConcatCols(xs) => {
                let mut offset = 0;
                for &v in xs {
                    let vv = self.value(v);
                    if self.needs(v) {
                        let mut d = Vec::with_capacity(vv.len());
                        for i in 0..vv.rows {
                            d.extend_from_slice(&g.row(i)[offset..offset + vv.cols]);
                        }
                        self.accumulate(adj, v, Tensor::new(vv.rows, vv.cols, d));
                    }
                    offset += vv.cols;
                }
            }
            Op::SparseMul { mat, transpose, x } => {
                let xv = self.value(*x);
                let d = if *transpose {
                    mat.mul(&g.data, g.cols)
                } else {
                    mat.tmul(&g.data, g.cols)
                };
                self.accumulate(adj, *x, Tensor::new(xv.rows, xv.cols, d));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let da = bv.data.iter().zip(&g.data).map(|(y, gv)| y * gv).collect();
                let db = av.data.iter().zip(&g.data).map(|(x, gv)| x * gv).collect();
                self.accumulate(adj, *a, Tensor::new(av.rows, av.cols, da));
                self.accumulate(adj, *b, Tensor::new(bv.rows, bv.cols, db));
            }
            Op::Add(a, b) => {
                self.accumulate(adj, *a, g.clone());
                self.accumulate(adj, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(adj, *a, g.clone());
                let neg = Tensor::new(g.rows, g.cols, g.data.iter().map(|v| -v).collect());
                self.accumulate(adj, *b, neg);
            }
            Op::Div(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let da = bv.data.iter().zip(&g.data).map(|(y, gv)| gv / y).collect();
                let db = av
                    .data
                    .iter()
                    .zip(&bv.data)
                    .zip(&g.data)
                    .map(|((x, y), gv)| -gv * x / (y * y))
                    .collect();
                self.accumulate(adj, *a, Tensor::new(av.rows, av.cols, da));
                self.accumulate(adj, *b, Tensor::new(bv.rows, bv.cols, db));
            }
            Op::Scale(x, alpha) => {
                let d = g.data.iter().map(|v| v * alpha).collect();
                self.accumulate(adj, *x, Tensor::new(g.rows, g.cols, d));
            }
            Op::SoftminRows { x, temperature } => {
                let y = &node.value;
                let mut d = vec![0.0; y.len()];
                for i in 0..y.rows {
                    let base = i * y.cols;
                    softmin_grad(&y.data, &g.data, base..base + y.cols, *temperature, &mut d);
                }
                self.accumulate(adj, *x, Tensor::new(y.rows, y.cols, d));
            }
            Op::SoftminSegments {
                x,
                segments,
                temperature,
            } => {
                let y = &node.value;
                let mut d = vec![0.0; y.len()];
                for gi in 0..segments.num_groups() {
                    let idx = segments.group(gi).filter(|&i| segments.is_active(i));
                    softmin_grad(&y.data, &g.data, idx, *temperature, &mut d);
                }
                self.accumulate(adj, *x, Tensor::column(d));
            }
            Op::MaxReduce { x, argmax } => {
                let xv = self.value(*x);
                let mut d = Tensor::zeros(xv.rows, xv.cols);
                d.data[*argmax] = g.data[0];
                self.accumulate(adj, *x, d);
            }
            Op::SumRows(x) => {
                let xv = self.value(*x);
                let mut d = Vec::with_capacity(xv.len());
                for _ in 0..xv.rows {
                    d.extend_from_slice(&g.data);
                }
                self.accumulate(adj, *x, Tensor::new(xv.rows, xv.cols, d));
            }
            Op::RepeatRows(x) => {
                let xv = self.value(*x);
                let mut d = vec![0.0; xv.cols];
                for i in 0..g.rows {
                    for (o, v) in d.iter_mut().zip(g.row(i)) {
                        *o += v;
                    }
                }
                self.accumulate(adj, *x, Tensor::new(1, xv.cols, d));
            }
            Op::RowMax { x, argmax } => {
                let xv = self.value(*x);
                let mut d = vec![0.0; xv.rows];
                for (r, best) in argmax.iter().enumerate() {
                    if let Some(j) = best {
                        d[*j] += g.data[r];
                    }
                }
                self.accumulate(adj, *x, Tensor::column(d));
            }
            Op::NormalizeSegments { x, segments, reset } => {
                let xv = self.value(*x);
                let y = &node.value;
                let mut d = vec![0.0; xv.rows];
                for gi in 0..segments.num_groups() {
                    if reset[gi] {
                        continue;
                    }
                    let active: Vec<usize> = segments.group(gi).filter(|&i| segments.is_active(i)).collect();
                    if active.is_empty() {
                        continue;
                    }
                    let sum: f64 = active.iter().map(|&i| xv.data[i]).sum();
                    let dot: f64 = active.iter().map(|&i| g.data[i] * y.data[i]).sum();
                    for &i in &active {
                        d[i] = (g.data[i] - dot) / sum;
                    }
                }
                self.accumulate(adj, *x, Tensor::column(d));
            }
        }
    }
}

/// `dx_i = -(1/τ) y_i (g_i - Σ_j y_j g_j)` over the given indices.
fn softmin_grad(y: &[f64], g: &[f64], idx: impl Iterator<Item = usize> + Clone, temperature: f64, out: &mut [f64]) {
    let dot: f64 = idx.clone().map(|i| y[i] * g[i]).sum();
    for i in idx {
        out[i] = -y[i] * (g[i] - dot) / temperature;
    }
}

#[cfg(test)]
mod tests;
