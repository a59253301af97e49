//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Graph`] records every operation applied during a forward pass and
//! replays them backwards in [`Graph::backward`]. Trainable tensors live in a
//! [`ParamStore`] and are borrowed by the graph, so evaluation passes never
//! copy parameters. Row vectors are `1 x d` matrices throughout.

use std::collections::BTreeMap;

use ndarray::{s, Array2, Axis};
use serde::{Deserialize, Serialize};

pub mod gradcheck;

/// Handle to a tensor registered in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Named trainable tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Array2<f64>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array2<f64>) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Array2<f64> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Order-sensitive FNV-1a digest of every parameter bit pattern.
    pub fn checksum(&self) -> u64 {
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        for value in &self.values {
            for x in value.iter() {
                for byte in x.to_bits().to_le_bytes() {
                    hash ^= u64::from(byte);
                    hash = hash.wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        hash
    }
}

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    /// Constant input, never differentiated.
    Input,
    /// Differentiable free input.
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Transpose(Var),
    Gelu(Var),
    SoftmaxRows(Var),
    LogSumExpRows(Var),
    LayerNormRows {
        x: Var,
        gain: Var,
        bias: Var,
        eps: f64,
    },
    L2NormalizeRows(Var),
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    SliceRows {
        x: Var,
        start: usize,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    SelectCols {
        x: Var,
        cols: Vec<usize>,
    },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    Mask(Var, Array2<f64>),
    Sum(Var),
    Mean(Var),
    BceWithLogits {
        logits: Var,
        targets: Array2<f64>,
    },
    CrossEntropyRows {
        logits: Var,
        targets: Vec<usize>,
    },
}

#[derive(Debug)]
struct Node {
    value: Option<Array2<f64>>,
    op: Op,
    requires_grad: bool,
}

/// Tape of operations recorded during one forward pass.
pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`].
#[derive(Debug, Default)]
pub struct Gradients {
    nodes: Vec<Option<Array2<f64>>>,
    params: BTreeMap<ParamId, Array2<f64>>,
}

impl Gradients {
    /// Gradient with respect to a leaf or parameter node, if it was reached.
    pub fn wrt(&self, var: Var) -> Option<&Array2<f64>> {
        self.nodes.get(var.0).and_then(Option::as_ref)
    }

    pub fn param(&self, id: ParamId) -> Option<&Array2<f64>> {
        self.params.get(&id)
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Array2<f64>)> {
        self.params.iter().map(|(k, v)| (*k, v))
    }

    /// Adds `other` into `self`, parameter-wise.
    pub fn accumulate_params(&mut self, other: &Gradients) {
        for (id, g) in &other.params {
            match self.params.get_mut(id) {
                Some(acc) => *acc += g,
                None => {
                    self.params.insert(*id, g.clone());
                }
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(xs);
    xs.iter().map(|x| (x - lse).exp()).collect()
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

fn softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

fn layer_norm_stats(x: &Array2<f64>, eps: f64) -> (Array2<f64>, Vec<f64>) {
    let cols = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut inv_std = Vec::with_capacity(x.nrows());
    for mut row in xhat.rows_mut() {
        let mean = row.sum() / cols;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols;
        let inv = 1.0 / (var + eps).sqrt();
        row.mapv_inplace(|v| (v - mean) * inv);
        inv_std.push(inv);
    }
    (xhat, inv_std)
}

fn row_norms(x: &Array2<f64>) -> Vec<f64> {
    x.rows()
        .into_iter()
        .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300))
        .collect()
}

fn scalar(v: f64) -> Array2<f64> {
    Array2::from_elem((1, 1), v)
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Array2<f64> {
        let node = &self.nodes[var.0];
        match (&node.value, &node.op) {
            (Some(v), _) => v,
            (None, Op::Param(id)) => self.params.get(*id),
            (None, _) => unreachable!("non-parameter node without a value"),
        }
    }

    /// Value of a `1 x 1` node.
    pub fn scalar(&self, var: Var) -> f64 {
        let v = self.value(var);
        debug_assert_eq!(v.dim(), (1, 1));
        v[[0, 0]]
    }

    pub fn shape(&self, var: Var) -> (usize, usize) {
        self.value(var).dim()
    }

    fn requires(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(&mut self, value: Array2<f64>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Input, false)
    }

    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Parameter value as a constant: gradients stop here.
    pub fn frozen_param(&mut self, id: ParamId) -> Var {
        let value = self.params.get(id).clone();
        self.input(value)
    }

    /// Copies a node's value into a constant, cutting the gradient path.
    pub fn detach(&mut self, var: Var) -> Var {
        let value = self.value(var).clone();
        self.input(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        let rg = self.requires(a) || self.requires(b);
        self.push(value, Op::MatMul(a, b), rg)
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(&self.value(b).t());
        let rg = self.requires(a) || self.requires(b);
        self.push(value, Op::MatMulT(a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add: shape mismatch");
        let value = self.value(a) + self.value(b);
        let rg = self.requires(a) || self.requires(b);
        self.push(value, Op::Add(a, b), rg)
    }

    /// Adds a `1 x m` row to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        assert_eq!(self.shape(row).0, 1, "add_row: bias must be a row");
        assert_eq!(self.shape(x).1, self.shape(row).1, "add_row: width mismatch");
        let value = self.value(x) + self.value(row);
        let rg = self.requires(x) || self.requires(row);
        self.push(value, Op::AddRow(x, row), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul: shape mismatch");
        let value = self.value(a) * self.value(b);
        let rg = self.requires(a) || self.requires(b);
        self.push(value, Op::Mul(a, b), rg)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let value = self.value(x) * factor;
        let rg = self.requires(x);
        self.push(value, Op::Scale(x, factor), rg)
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let value = self.value(x).t().to_owned();
        let rg = self.requires(x);
        self.push(value, Op::Transpose(x), rg)
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let value = self.value(x).mapv(gelu);
        let rg = self.requires(x);
        self.push(value, Op::Gelu(x), rg)
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let value = softmax_rows(self.value(x));
        let rg = self.requires(x);
        self.push(value, Op::SoftmaxRows(x), rg)
    }

    /// Row-wise log-sum-exp, producing an `n x 1` column.
    pub fn log_sum_exp_rows(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let mut out = Array2::zeros((v.nrows(), 1));
        for (i, row) in v.rows().into_iter().enumerate() {
            out[[i, 0]] = log_sum_exp(row.as_slice().unwrap_or(&row.to_vec()));
        }
        let rg = self.requires(x);
        self.push(out, Op::LogSumExpRows(x), rg)
    }

    pub fn layer_norm_rows(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Var {
        let (xhat, _) = layer_norm_stats(self.value(x), eps);
        let value = xhat * self.value(gain) + self.value(bias);
        let rg = self.requires(x) || self.requires(gain) || self.requires(bias);
        self.push(
            value,
            Op::LayerNormRows {
                x,
                gain,
                bias,
                eps,
            },
            rg,
        )
    }

    /// Scales each row to unit Euclidean norm. Rows must be nonzero.
    pub fn l2_normalize_rows(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let norms = row_norms(v);
        let mut out = v.clone();
        for (mut row, n) in out.rows_mut().into_iter().zip(&norms) {
            row.mapv_inplace(|e| e / n);
        }
        let rg = self.requires(x);
        self.push(out, Op::L2NormalizeRows(x), rg)
    }

    /// Selects rows of `table` by index (embedding lookup).
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let mut out = Array2::zeros((ids.len(), t.ncols()));
        for (r, &id) in ids.iter().enumerate() {
            out.row_mut(r).assign(&t.row(id));
        }
        let rg = self.requires(table);
        self.push(
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            rg,
        )
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Var {
        let value = self.value(x).slice(s![start..end, ..]).to_owned();
        let rg = self.requires(x);
        self.push(value, Op::SliceRows { x, start }, rg)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Var {
        let value = self.value(x).slice(s![.., start..end]).to_owned();
        let rg = self.requires(x);
        self.push(value, Op::SliceCols { x, start }, rg)
    }

    pub fn select_cols(&mut self, x: Var, cols: &[usize]) -> Var {
        let value = self.value(x).select(Axis(1), cols);
        let rg = self.requires(x);
        self.push(
            value,
            Op::SelectCols {
                x,
                cols: cols.to_vec(),
            },
            rg,
        )
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let value = ndarray::concatenate(Axis(0), &views).expect("concat_rows: width mismatch");
        let rg = parts.iter().any(|p| self.requires(*p));
        self.push(value, Op::ConcatRows(parts.to_vec()), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("concat_cols: height mismatch");
        let rg = parts.iter().any(|p| self.requires(*p));
        self.push(value, Op::ConcatCols(parts.to_vec()), rg)
    }

    /// Elementwise product with a constant mask (dropout).
    pub fn mask(&mut self, x: Var, mask: Array2<f64>) -> Var {
        assert_eq!(self.shape(x), mask.dim(), "mask: shape mismatch");
        let value = self.value(x) * &mask;
        let rg = self.requires(x);
        self.push(value, Op::Mask(x, mask), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = scalar(self.value(x).sum());
        let rg = self.requires(x);
        self.push(value, Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let value = scalar(v.sum() / v.len() as f64);
        let rg = self.requires(x);
        self.push(value, Op::Mean(x), rg)
    }

    /// Weighted sum of scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(f64, Var)]) -> Var {
        let mut acc: Option<Var> = None;
        for &(w, v) in terms {
            let scaled = if w == 1.0 { v } else { self.scale(v, w) };
            acc = Some(match acc {
                Some(a) => self.add(a, scaled),
                None => scaled,
            });
        }
        acc.unwrap_or_else(|| self.input(scalar(0.0)))
    }

    /// Mean binary cross-entropy of logistic outputs against `targets`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: Array2<f64>) -> Var {
        let z = self.value(logits);
        assert_eq!(z.dim(), targets.dim(), "bce_with_logits: shape mismatch");
        let total: f64 = z
            .iter()
            .zip(targets.iter())
            .map(|(&z, &t)| z.max(0.0) - z * t + (-z.abs()).exp().ln_1p())
            .sum();
        let value = scalar(total / z.len() as f64);
        let rg = self.requires(logits);
        self.push(value, Op::BceWithLogits { logits, targets }, rg)
    }

    /// Mean over rows of the categorical cross-entropy of `softmax(row)`.
    pub fn cross_entropy_rows(&mut self, logits: Var, targets: &[usize]) -> Var {
        let z = self.value(logits);
        assert_eq!(z.nrows(), targets.len(), "cross_entropy_rows: row mismatch");
        let mut total = 0.0;
        for (row, &t) in z.rows().into_iter().zip(targets) {
            let row = row.to_vec();
            total += log_sum_exp(&row) - row[t];
        }
        let value = scalar(total / targets.len() as f64);
        let rg = self.requires(logits);
        self.push(
            value,
            Op::CrossEntropyRows {
                logits,
                targets: targets.to_vec(),
            },
            rg,
        )
    }

    /// Back-propagates from a scalar node.
    pub fn backward(&self, output: Var) -> Gradients {
        assert_eq!(self.shape(output), (1, 1), "backward: output must be scalar");
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(scalar(1.0));
        let mut params: BTreeMap<ParamId, Array2<f64>> = BTreeMap::new();

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(dy) = grads[idx].take() else {
                continue;
            };
            let send = |var: Var, g: Array2<f64>, grads: &mut Vec<Option<Array2<f64>>>| {
                if !self.nodes[var.0].requires_grad {
                    return;
                }
                match &mut grads[var.0] {
                    Some(acc) => *acc += &g,
                    slot @ None => *slot = Some(g),
                }
            };
            match &node.op {
                Op::Input => {}
                Op::Leaf => {
                    grads[idx] = Some(dy);
                    continue;
                }
                Op::Param(id) => {
                    match params.get_mut(id) {
                        Some(acc) => *acc += &dy,
                        None => {
                            params.insert(*id, dy.clone());
                        }
                    }
                    grads[idx] = Some(dy);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if self.requires(*a) {
                        send(*a, dy.dot(&bv.t()), &mut grads);
                    }
                    if self.requires(*b) {
                        send(*b, av.t().dot(&dy), &mut grads);
                    }
                }
                Op::MatMulT(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if self.requires(*a) {
                        send(*a, dy.dot(bv), &mut grads);
                    }
                    if self.requires(*b) {
                        send(*b, dy.t().dot(av), &mut grads);
                    }
                }
                Op::Add(a, b) => {
                    send(*a, dy.clone(), &mut grads);
                    send(*b, dy, &mut grads);
                }
                Op::AddRow(x, row) => {
                    let drow = dy.sum_axis(Axis(0)).insert_axis(Axis(0));
                    send(*row, drow, &mut grads);
                    send(*x, dy, &mut grads);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if self.requires(*a) {
                        send(*a, &dy * bv, &mut grads);
                    }
                    if self.requires(*b) {
                        send(*b, &dy * av, &mut grads);
                    }
                }
                Op::Scale(x, f) => send(*x, dy * *f, &mut grads),
                Op::Transpose(x) => send(*x, dy.t().to_owned(), &mut grads),
                Op::Gelu(x) => {
                    let dx = &dy * &self.value(*x).mapv(gelu_grad);
                    send(*x, dx, &mut grads);
                }
                Op::SoftmaxRows(x) => {
                    let y = node.value.as_ref().expect("softmax value");
                    let mut dx = &dy * y;
                    for (mut row, yrow) in dx.rows_mut().into_iter().zip(y.rows()) {
                        let dot = row.sum();
                        // row currently holds dy*y; dx = y*dy - y*sum(dy*y)
                        row.zip_mut_with(&yrow, |d, &yv| *d -= yv * dot);
                    }
                    send(*x, dx, &mut grads);
                }
                Op::LogSumExpRows(x) => {
                    let mut dx = softmax_rows(self.value(*x));
                    for (mut row, d) in dx.rows_mut().into_iter().zip(dy.column(0)) {
                        row.mapv_inplace(|v| v * d);
                    }
                    send(*x, dx, &mut grads);
                }
                Op::LayerNormRows { x, gain, bias, eps } => {
                    let (xhat, inv_std) = layer_norm_stats(self.value(*x), *eps);
                    if self.requires(*gain) {
                        let dg = (&dy * &xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
                        send(*gain, dg, &mut grads);
                    }
                    if self.requires(*bias) {
                        send(*bias, dy.sum_axis(Axis(0)).insert_axis(Axis(0)), &mut grads);
                    }
                    if self.requires(*x) {
                        let dxhat = &dy * self.value(*gain);
                        let cols = xhat.ncols() as f64;
                        let mut dx = Array2::zeros(xhat.dim());
                        for r in 0..xhat.nrows() {
                            let dr = dxhat.row(r);
                            let xr = xhat.row(r);
                            let mean_d = dr.sum() / cols;
                            let mean_dx = dr.dot(&xr) / cols;
                            for c in 0..xhat.ncols() {
                                dx[[r, c]] = inv_std[r] * (dr[c] - mean_d - xr[c] * mean_dx);
                            }
                        }
                        send(*x, dx, &mut grads);
                    }
                }
                Op::L2NormalizeRows(x) => {
                    let y = node.value.as_ref().expect("normalize value");
                    let norms = row_norms(self.value(*x));
                    let mut dx = dy.clone();
                    for (r, n) in norms.iter().enumerate() {
                        let dot = dy.row(r).dot(&y.row(r));
                        for c in 0..y.ncols() {
                            dx[[r, c]] = (dy[[r, c]] - y[[r, c]] * dot) / n;
                        }
                    }
                    send(*x, dx, &mut grads);
                }
                Op::Gather { table, ids } => {
                    let mut dt = Array2::zeros(self.shape(*table));
                    for (r, &id) in ids.iter().enumerate() {
                        let mut row = dt.row_mut(id);
                        row += &dy.row(r);
                    }
                    send(*table, dt, &mut grads);
                }
                Op::SliceRows { x, start } => {
                    let mut dx = Array2::zeros(self.shape(*x));
                    dx.slice_mut(s![*start..*start + dy.nrows(), ..]).assign(&dy);
                    send(*x, dx, &mut grads);
                }
                Op::SliceCols { x, start } => {
                    let mut dx = Array2::zeros(self.shape(*x));
                    dx.slice_mut(s![.., *start..*start + dy.ncols()]).assign(&dy);
                    send(*x, dx, &mut grads);
                }
                Op::SelectCols { x, cols } => {
                    let mut dx = Array2::zeros(self.shape(*x));
                    for (j, &c) in cols.iter().enumerate() {
                        let mut col = dx.column_mut(c);
                        col += &dy.column(j);
                    }
                    send(*x, dx, &mut grads);
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let rows = self.shape(*p).0;
                        let g = dy.slice(s![offset..offset + rows, ..]).to_owned();
                        send(*p, g, &mut grads);
                        offset += rows;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let cols = self.shape(*p).1;
                        let g = dy.slice(s![.., offset..offset + cols]).to_owned();
                        send(*p, g, &mut grads);
                        offset += cols;
                    }
                }
                Op::Mask(x, mask) => send(*x, &dy * mask, &mut grads),
                Op::Sum(x) => {
                    let g = Array2::from_elem(self.shape(*x), dy[[0, 0]]);
                    send(*x, g, &mut grads);
                }
                Op::Mean(x) => {
                    let shape = self.shape(*x);
                    let g = Array2::from_elem(shape, dy[[0, 0]] / (shape.0 * shape.1) as f64);
                    send(*x, g, &mut grads);
                }
                Op::BceWithLogits { logits, targets } => {
                    let z = self.value(*logits);
                    let n = z.len() as f64;
                    let d = dy[[0, 0]];
                    let mut g = z.mapv(sigmoid);
                    g.zip_mut_with(targets, |p, &t| *p = (*p - t) * d / n);
                    send(*logits, g, &mut grads);
                }
                Op::CrossEntropyRows { logits, targets } => {
                    let mut g = softmax_rows(self.value(*logits));
                    let n = targets.len() as f64;
                    let d = dy[[0, 0]];
                    for (r, &t) in targets.iter().enumerate() {
                        g[[r, t]] -= 1.0;
                    }
                    g.mapv_inplace(|v| v * d / n);
                    send(*logits, g, &mut grads);
                }
            }
        }

        Gradients {
            nodes: grads,
            params,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::gradcheck::check_gradients;
    use super::*;
    use ndarray::array;

    fn sample(rows: usize, cols: usize, offset: f64) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |(r, c)| {
            ((r * 7 + c * 3) as f64 * 0.37 + offset).sin()
        })
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0);
        assert!((sigmoid(800.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn matmul_and_bias_gradients() {
        let report = check_gradients(
            &[sample(3, 4, 0.1), sample(4, 2, 0.7), sample(1, 2, 0.3)],
            |g, v| {
                let y = g.matmul(v[0], v[1]);
                let y = g.add_row(y, v[2]);
                let y = g.gelu(y);
                g.sum(y)
            },
        );
        assert!(report.max_relative_error < 1e-6, "{report:?}");
    }

    #[test]
    fn attention_style_composition_gradients() {
        let report = check_gradients(&[sample(3, 4, 0.2), sample(5, 4, 1.1)], |g, v| {
            let scores = g.matmul_t(v[0], v[1]);
            let scores = g.scale(scores, 0.5);
            let attn = g.softmax_rows(scores);
            let out = g.matmul(attn, v[1]);
            let t = g.transpose(out);
            let sq = g.mul(t, t);
            g.mean(sq)
        });
        assert!(report.max_relative_error < 1e-6, "{report:?}");
    }

    #[test]
    fn layer_norm_gradients() {
        let report = check_gradients(
            &[sample(3, 5, 0.4), sample(1, 5, 0.9), sample(1, 5, 0.2)],
            |g, v| {
                let y = g.layer_norm_rows(v[0], v[1], v[2], 1e-5);
                let w = g.input(sample(3, 5, 2.0));
                let y = g.mul(y, w);
                g.sum(y)
            },
        );
        assert!(report.max_relative_error < 1e-6, "{report:?}");
    }

    #[test]
    fn normalize_lse_and_selection_gradients() {
        let report = check_gradients(&[sample(4, 3, 0.5)], |g, v| {
            let n = g.l2_normalize_rows(v[0]);
            let a = g.slice_rows(n, 0, 1);
            let rest = g.slice_rows(n, 1, 4);
            let sims = g.matmul_t(a, rest);
            let picked = g.select_cols(sims, &[0, 2]);
            let lse = g.log_sum_exp_rows(sims);
            let p = g.mean(picked);
            let l = g.sum(lse);
            g.weighted_sum(&[(-1.0, p), (1.0, l)])
        });
        assert!(report.max_relative_error < 1e-6, "{report:?}");
    }

    #[test]
    fn loss_op_gradients() {
        let targets = array![[1.0, 0.0, 1.0], [0.0, 0.0, 1.0]];
        let report = check_gradients(&[sample(2, 3, 0.1), sample(4, 3, 0.6)], move |g, v| {
            let bce = g.bce_with_logits(v[0], targets.clone());
            let ce = g.cross_entropy_rows(v[1], &[0, 2, 1, 1]);
            let table = g.concat_rows(&[v[0], v[1]]);
            let rows = g.gather_rows(table, &[1, 4, 1]);
            let cols = g.concat_cols(&[rows, rows]);
            let cs = g.slice_cols(cols, 1, 4);
            let masked = g.mask(cs, Array2::from_elem((3, 3), 2.0));
            let m = g.mean(masked);
            g.weighted_sum(&[(1.0, bce), (0.5, ce), (0.25, m)])
        });
        assert!(report.max_relative_error < 1e-6, "{report:?}");
    }

    #[test]
    fn detached_nodes_receive_no_gradient() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let x = g.leaf(sample(2, 2, 0.0));
        let d = g.detach(x);
        let y = g.mul(d, x);
        let s = g.sum(y);
        let grads = g.backward(s);
        // d/dx of sum(stop(x) * x) is stop(x)
        assert_eq!(grads.wrt(x).unwrap(), g.value(d));
        assert!(grads.wrt(d).is_none());
    }

    #[test]
    fn parameters_accumulate_across_uses() {
        let mut store = ParamStore::new();
        let w = store.add("w", array![[2.0]]);
        let mut g = Graph::new(&store);
        let a = g.param(w);
        let b = g.param(w);
        let y = g.mul(a, b);
        let s = g.sum(y);
        let grads = g.backward(s);
        assert_eq!(grads.param(w).unwrap()[[0, 0]], 4.0);
    }

    #[test]
    fn cross_entropy_of_uniform_logits_is_log_vocab() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let z = g.input(Array2::zeros((3, 7)));
        let ce = g.cross_entropy_rows(z, &[0, 3, 6]);
        assert!((g.scalar(ce) - 7f64.ln()).abs() < 1e-12);
    }
}
