//! Reverse-mode automatic differentiation over a fixed set of rank-2 operations.
//!
//! A [`Tape`] records every operation in execution order, so node inputs always
//! reference earlier nodes and the tape is topologically sorted by construction.
//! Trainable leaves are registered with [`Tape::param`]; everything created with
//! [`Tape::constant`] or [`Tape::frozen`] is excluded from gradient propagation and
//! never shows up in a [`GradientReport`].
//!
//! Randomness never lives on the tape: dropout takes an explicit mask, so replaying
//! the same inputs reproduces every value bit for bit.

use std::borrow::Cow;
use std::collections::HashSet;

use super::matrix::{gemm, Matrix};
use super::NumericsError;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Param { name: String },
    Constant,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    ScalarMul(Var, f64),
    ElemMul(Var, Var),
    DivScalar(Var, Var),
    Relu(Var),
    Dropout(Var, Matrix),
    MeanAll(Var),
    MeanRows(Var),
    FrobeniusNorm(Var),
    FrobeniusInner(Var, Var),
    Transpose(Var),
    RowMeanCenter(Var),
    SquareErrorMasked { pred: Var, target: Matrix, mask: Matrix, count: f64 },
    SoftmaxRows(Var),
    LayerNormRows { input: Var, inv_std: Vec<f64> },
    AddRow(Var, Var),
    GatherRows(Var, Vec<usize>),
    ConcatRows(Vec<Var>),
    L2NormalizeRows { input: Var, norms: Vec<f64> },
    Clamp { input: Var, lo: f64, hi: f64 },
    CrossEntropyRows { logits: Var, targets: Vec<usize>, probs: Matrix },
    MeanAbsError { pred: Var, target: Matrix },
}

struct Node<'a> {
    value: Cow<'a, Matrix>,
    op: Op,
    needs_grad: bool,
}

/// Gradients of a scalar loss with respect to every trainable leaf on a tape.
#[derive(Clone, Debug)]
pub struct GradientReport {
    /// `(parameter name, gradient)` in registration order.
    pub grads: Vec<(String, Matrix)>,
    pub max_abs_grad: f64,
    pub step: u64,
    /// Parameters the loss does not depend on; their gradients are zero.
    pub disconnected: Vec<String>,
}

impl GradientReport {
    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.grads.iter().find(|(n, _)| n == name).map(|(_, g)| g)
    }

    /// Adds another report's gradients entrywise. Parameter sets must agree.
    pub fn accumulate(&mut self, other: &GradientReport) -> Result<(), NumericsError> {
        if self.grads.len() != other.grads.len() {
            return Err(NumericsError::Shape {
                op: "accumulate",
                detail: format!("{} vs {} parameters", self.grads.len(), other.grads.len()),
            });
        }
        for ((na, ga), (nb, gb)) in self.grads.iter_mut().zip(&other.grads) {
            if na != nb || ga.shape() != gb.shape() {
                return Err(NumericsError::Shape {
                    op: "accumulate",
                    detail: format!("parameter {na} vs {nb}"),
                });
            }
            ga.add_assign(gb);
        }
        self.disconnected.retain(|n| other.disconnected.contains(n));
        self.max_abs_grad = self.grads.iter().fold(0.0, |m, (_, g)| m.max(g.max_abs()));
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        for (_, g) in &mut self.grads {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
        self.max_abs_grad *= s.abs();
    }
}

/// Records a computation for reverse-mode differentiation.
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
    param_names: HashSet<String>,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &'static str, detail: String) -> NumericsError {
    NumericsError::Shape { op, detail }
}

fn same_shape(op: &'static str, a: &Matrix, b: &Matrix) -> Result<(), NumericsError> {
    if a.shape() != b.shape() {
        return Err(shape_err(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn accumulate(slot: &mut Option<Matrix>, contrib: Matrix) {
    match slot {
        Some(m) => m.add_assign(&contrib),
        None => *slot = Some(contrib),
    }
}

fn accumulate_gemm(
    slot: &mut Option<Matrix>,
    shape: (usize, usize),
    a: &Matrix,
    ta: bool,
    b: &Matrix,
    tb: bool,
) {
    match slot {
        Some(m) => gemm(a, ta, b, tb, 1.0, m),
        None => {
            let mut m = Matrix::zeros(shape.0, shape.1);
            gemm(a, ta, b, tb, 0.0, &mut m);
            *slot = Some(m);
        }
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            param_names: HashSet::new(),
        }
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

    fn push(&mut self, value: Cow<'a, Matrix>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_owned(&mut self, value: Matrix, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.push(Cow::Owned(value), op, needs_grad)
    }

    /// Registers a trainable leaf. Names must be unique per tape.
    pub fn param(&mut self, name: &str, value: &'a Matrix) -> Result<Var, NumericsError> {
        if !self.param_names.insert(name.to_string()) {
            return Err(NumericsError::DuplicateParam(name.to_string()));
        }
        Ok(self.push(
            Cow::Borrowed(value),
            Op::Param {
                name: name.to_string(),
            },
            true,
        ))
    }

    /// Registers a leaf that must never receive a gradient.
    pub fn frozen(&mut self, value: &'a Matrix) -> Var {
        self.push(Cow::Borrowed(value), Op::Constant, false)
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(Cow::Owned(value), Op::Constant, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push_owned(value, Op::MatMul(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        same_shape("add", self.value(a), self.value(b))?;
        let value = self.value(a).zip_with(self.value(b), |x, y| x + y)?;
        Ok(self.push_owned(value, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        same_shape("sub", self.value(a), self.value(b))?;
        let value = self.value(a).zip_with(self.value(b), |x, y| x - y)?;
        Ok(self.push_owned(value, Op::Sub(a, b), &[a, b]))
    }

    pub fn scalar_mul(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).scale(c);
        self.push_owned(value, Op::ScalarMul(a, c), &[a])
    }

    pub fn elementwise_mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        same_shape("elementwise_mul", self.value(a), self.value(b))?;
        let value = self.value(a).zip_with(self.value(b), |x, y| x * y)?;
        Ok(self.push_owned(value, Op::ElemMul(a, b), &[a, b]))
    }

    /// Divides every entry of `a` by the 1×1 node `s`.
    pub fn div_scalar(&mut self, a: Var, s: Var) -> Result<Var, NumericsError> {
        if self.value(s).shape() != (1, 1) {
            return Err(shape_err(
                "div_scalar",
                format!("divisor must be 1x1, got {:?}", self.value(s).shape()),
            ));
        }
        let d = self.value(s).item();
        if d == 0.0 {
            return Err(NumericsError::NonFinite {
                context: "div_scalar by zero".into(),
            });
        }
        let value = self.value(a).scale(1.0 / d);
        Ok(self.push_owned(value, Op::DivScalar(a, s), &[a, s]))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(0.0));
        self.push_owned(value, Op::Relu(a), &[a])
    }

    /// Multiplies by an explicit mask (entries are typically 0 or 1/(1-p)).
    pub fn dropout_with_mask(&mut self, a: Var, mask: Matrix) -> Result<Var, NumericsError> {
        same_shape("dropout_with_mask", self.value(a), &mask)?;
        let value = self.value(a).zip_with(&mask, |x, m| x * m)?;
        Ok(self.push_owned(value, Op::Dropout(a, mask), &[a]))
    }

    pub fn mean_all(&mut self, a: Var) -> Result<Var, NumericsError> {
        let m = self.value(a);
        if m.is_empty() {
            return Err(shape_err("mean_all", "empty input".into()));
        }
        let value = Matrix::scalar(m.data().iter().sum::<f64>() / m.len() as f64);
        Ok(self.push_owned(value, Op::MeanAll(a), &[a]))
    }

    /// Mean over rows, giving a `1 × cols` node.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var, NumericsError> {
        if self.value(a).rows() == 0 {
            return Err(shape_err("mean_rows", "no rows".into()));
        }
        let value = self.value(a).column_means();
        Ok(self.push_owned(value, Op::MeanRows(a), &[a]))
    }

    pub fn frobenius_norm(&mut self, a: Var) -> Var {
        let value = Matrix::scalar(self.value(a).frobenius_norm());
        self.push_owned(value, Op::FrobeniusNorm(a), &[a])
    }

    pub fn frobenius_inner(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let value = Matrix::scalar(self.value(a).frobenius_inner(self.value(b))?);
        Ok(self.push_owned(value, Op::FrobeniusInner(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        self.push_owned(value, Op::Transpose(a), &[a])
    }

    /// Subtracts each column's mean over the rows.
    pub fn row_mean_center(&mut self, a: Var) -> Var {
        let value = self.value(a).center_columns();
        self.push_owned(value, Op::RowMeanCenter(a), &[a])
    }

    /// Mean of `(pred - target)²` over cells where `mask` is nonzero (mask entries act as weights).
    pub fn square_error_masked(
        &mut self,
        pred: Var,
        target: Matrix,
        mask: Matrix,
    ) -> Result<Var, NumericsError> {
        same_shape("square_error_masked", self.value(pred), &target)?;
        same_shape("square_error_masked", &target, &mask)?;
        let count: f64 = mask.data().iter().sum();
        if count <= 0.0 {
            return Err(shape_err("square_error_masked", "mask selects no cells".into()));
        }
        let p = self.value(pred);
        let total: f64 = p
            .data()
            .iter()
            .zip(target.data())
            .zip(mask.data())
            .map(|((p, t), m)| m * (p - t) * (p - t))
            .sum();
        let value = Matrix::scalar(total / count);
        Ok(self.push_owned(
            value,
            Op::SquareErrorMasked {
                pred,
                target,
                mask,
                count,
            },
            &[pred],
        ))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut out = x.clone();
        for r in 0..out.rows() {
            softmax_in_place(out.row_mut(r));
        }
        self.push_owned(out, Op::SoftmaxRows(a), &[a])
    }

    /// Normalizes each row to zero mean and unit variance (no affine terms).
    pub fn layer_norm_rows(&mut self, a: Var, eps: f64) -> Var {
        let x = self.value(a);
        let cols = x.cols() as f64;
        let mut out = x.clone();
        let mut inv_std = Vec::with_capacity(x.rows());
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let mean = row.iter().sum::<f64>() / cols;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols;
            let is = 1.0 / (var + eps).sqrt();
            row.iter_mut().for_each(|v| *v = (*v - mean) * is);
            inv_std.push(is);
        }
        self.push_owned(out, Op::LayerNormRows { input: a, inv_std }, &[a])
    }

    /// Adds the `1 × cols` node `row` to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, NumericsError> {
        let (x, r) = (self.value(a), self.value(row));
        if r.rows() != 1 || r.cols() != x.cols() {
            return Err(shape_err(
                "add_row",
                format!("{:?} + row {:?}", x.shape(), r.shape()),
            ));
        }
        let mut out = x.clone();
        for i in 0..out.rows() {
            for (v, b) in out.row_mut(i).iter_mut().zip(r.data()) {
                *v += b;
            }
        }
        Ok(self.push_owned(out, Op::AddRow(a, row), &[a, row]))
    }

    pub fn gather_rows(&mut self, a: Var, indices: Vec<usize>) -> Result<Var, NumericsError> {
        let x = self.value(a);
        if let Some(&bad) = indices.iter().find(|&&i| i >= x.rows()) {
            return Err(shape_err(
                "gather_rows",
                format!("row {bad} out of range for {:?}", x.shape()),
            ));
        }
        let value = x.select_rows(&indices);
        Ok(self.push_owned(value, Op::GatherRows(a, indices), &[a]))
    }

    pub fn concat_rows(&mut self, parts: Vec<Var>) -> Result<Var, NumericsError> {
        if parts.is_empty() {
            return Err(shape_err("concat_rows", "no inputs".into()));
        }
        let mats: Vec<&Matrix> = parts.iter().map(|&v| self.value(v)).collect();
        let value = Matrix::vstack(&mats)?;
        let needs = parts.clone();
        Ok(self.push_owned(value, Op::ConcatRows(parts), &needs))
    }

    /// Scales each row to unit Euclidean norm.
    pub fn l2_normalize_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut out = x.clone();
        let mut norms = Vec::with_capacity(x.rows());
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            row.iter_mut().for_each(|v| *v /= n);
            norms.push(n);
        }
        self.push_owned(out, Op::L2NormalizeRows { input: a, norms }, &[a])
    }

    /// Clamps entries to `[lo, hi]`; gradient flows only where the input is inside.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let value = self.value(a).map(|x| x.clamp(lo, hi));
        self.push_owned(value, Op::Clamp { input: a, lo, hi }, &[a])
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of `logits`.
    pub fn cross_entropy_rows(
        &mut self,
        logits: Var,
        targets: Vec<usize>,
    ) -> Result<Var, NumericsError> {
        let x = self.value(logits);
        if targets.len() != x.rows() || x.rows() == 0 {
            return Err(shape_err(
                "cross_entropy_rows",
                format!("{} targets for {:?}", targets.len(), x.shape()),
            ));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= x.cols()) {
            return Err(shape_err(
                "cross_entropy_rows",
                format!("target class {bad} out of range for {} columns", x.cols()),
            ));
        }
        let mut probs = x.clone();
        let mut nll = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            softmax_in_place(probs.row_mut(r));
            nll -= probs.get(r, t).max(1e-300).ln();
        }
        let value = Matrix::scalar(nll / targets.len() as f64);
        Ok(self.push_owned(
            value,
            Op::CrossEntropyRows {
                logits,
                targets,
                probs,
            },
            &[logits],
        ))
    }

    pub fn mean_abs_error(&mut self, pred: Var, target: Matrix) -> Result<Var, NumericsError> {
        same_shape("mean_abs_error", self.value(pred), &target)?;
        let p = self.value(pred);
        if p.is_empty() {
            return Err(shape_err("mean_abs_error", "empty input".into()));
        }
        let total: f64 = p
            .data()
            .iter()
            .zip(target.data())
            .map(|(a, b)| (a - b).abs())
            .sum();
        let value = Matrix::scalar(total / p.len() as f64);
        Ok(self.push_owned(value, Op::MeanAbsError { pred, target }, &[pred]))
    }

    /// Propagates gradients from a scalar node back to every trainable leaf.
    pub fn backward(&self, loss: Var) -> Result<GradientReport, NumericsError> {
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(NumericsError::NonScalarLoss { shape });
        }
        let mut grads: Vec<Option<Matrix>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::scalar(1.0));
        let mut param_grads: Vec<(usize, Matrix)> = Vec::new();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let y = &*node.value;
            let needs = |v: Var| self.nodes[v.0].needs_grad;
            let val = |v: Var| &*self.nodes[v.0].value;
            match &node.op {
                Op::Param { .. } => param_grads.push((i, g)),
                Op::Constant => {}
                Op::MatMul(a, b) => {
                    let (a, b) = (*a, *b);
                    if needs(a) {
                        accumulate_gemm(&mut grads[a.0], val(a).shape(), &g, false, val(b), true);
                    }
                    if needs(b) {
                        accumulate_gemm(&mut grads[b.0], val(b).shape(), val(a), true, &g, false);
                    }
                }
                Op::Add(a, b) => {
                    if needs(*b) {
                        accumulate(&mut grads[b.0], g.clone());
                    }
                    if needs(*a) {
                        accumulate(&mut grads[a.0], g);
                    }
                }
                Op::Sub(a, b) => {
                    if needs(*b) {
                        accumulate(&mut grads[b.0], g.scale(-1.0));
                    }
                    if needs(*a) {
                        accumulate(&mut grads[a.0], g);
                    }
                }
                Op::ScalarMul(a, c) => accumulate(&mut grads[a.0], g.scale(*c)),
                Op::ElemMul(a, b) => {
                    if needs(*a) {
                        accumulate(&mut grads[a.0], g.zip_with(val(*b), |x, y| x * y)?);
                    }
                    if needs(*b) {
                        accumulate(&mut grads[b.0], g.zip_with(val(*a), |x, y| x * y)?);
                    }
                }
                Op::DivScalar(a, s) => {
                    let d = val(*s).item();
                    if needs(*s) {
                        let dot = g.frobenius_inner(val(*a))?;
                        accumulate(&mut grads[s.0], Matrix::scalar(-dot / (d * d)));
                    }
                    if needs(*a) {
                        accumulate(&mut grads[a.0], g.scale(1.0 / d));
                    }
                }
                Op::Relu(a) => {
                    let contrib = g.zip_with(val(*a), |gv, x| if x > 0.0 { gv } else { 0.0 })?;
                    accumulate(&mut grads[a.0], contrib);
                }
                Op::Dropout(a, mask) => accumulate(&mut grads[a.0], g.zip_with(mask, |x, m| x * m)?),
                Op::MeanAll(a) => {
                    let x = val(*a);
                    let s = g.item() / x.len() as f64;
                    accumulate(&mut grads[a.0], Matrix::filled(x.rows(), x.cols(), s));
                }
                Op::MeanRows(a) => {
                    let x = val(*a);
                    let n = x.rows() as f64;
                    let mut contrib = Matrix::zeros(x.rows(), x.cols());
                    for r in 0..x.rows() {
                        for (c, gv) in contrib.row_mut(r).iter_mut().zip(g.data()) {
                            *c = gv / n;
                        }
                    }
                    accumulate(&mut grads[a.0], contrib);
                }
                Op::FrobeniusNorm(a) => {
                    let n = y.item();
                    let s = if n > 0.0 { g.item() / n } else { 0.0 };
                    accumulate(&mut grads[a.0], val(*a).scale(s));
                }
                Op::FrobeniusInner(a, b) => {
                    let s = g.item();
                    if needs(*a) {
                        accumulate(&mut grads[a.0], val(*b).scale(s));
                    }
                    if needs(*b) {
                        accumulate(&mut grads[b.0], val(*a).scale(s));
                    }
                }
                Op::Transpose(a) => accumulate(&mut grads[a.0], g.transpose()),
                Op::RowMeanCenter(a) => accumulate(&mut grads[a.0], g.center_columns()),
                Op::SquareErrorMasked {
                    pred,
                    target,
                    mask,
                    count,
                } => {
                    let s = 2.0 * g.item() / count;
                    let p = val(*pred);
                    let data = p
                        .data()
                        .iter()
                        .zip(target.data())
                        .zip(mask.data())
                        .map(|((p, t), m)| s * m * (p - t))
                        .collect();
                    accumulate(
                        &mut grads[pred.0],
                        Matrix::from_vec_unchecked(p.rows(), p.cols(), data),
                    );
                }
                Op::SoftmaxRows(a) => {
                    let mut contrib = g.clone();
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let dot: f64 = g.row(r).iter().zip(yr).map(|(a, b)| a * b).sum();
                        for (c, yv) in contrib.row_mut(r).iter_mut().zip(yr) {
                            *c = yv * (*c - dot);
                        }
                    }
                    accumulate(&mut grads[a.0], contrib);
                }
                Op::LayerNormRows { input, inv_std } => {
                    let cols = y.cols() as f64;
                    let mut contrib = g.clone();
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let mean_g = gr.iter().sum::<f64>() / cols;
                        let mean_gy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / cols;
                        for ((c, gv), yv) in contrib.row_mut(r).iter_mut().zip(gr).zip(yr) {
                            *c = inv_std[r] * (gv - mean_g - yv * mean_gy);
                        }
                    }
                    accumulate(&mut grads[input.0], contrib);
                }
                Op::AddRow(a, row) => {
                    if needs(*row) {
                        let mut sums = vec![0.0; g.cols()];
                        for r in 0..g.rows() {
                            for (s, v) in sums.iter_mut().zip(g.row(r)) {
                                *s += v;
                            }
                        }
                        accumulate(&mut grads[row.0], Matrix::row_vector(sums));
                    }
                    if needs(*a) {
                        accumulate(&mut grads[a.0], g);
                    }
                }
                Op::GatherRows(a, indices) => {
                    let x = val(*a);
                    let slot = grads[a.0].get_or_insert_with(|| Matrix::zeros(x.rows(), x.cols()));
                    for (r, &src) in indices.iter().enumerate() {
                        for (d, v) in slot.row_mut(src).iter_mut().zip(g.row(r)) {
                            *d += v;
                        }
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let rows = val(p).rows();
                        if needs(p) {
                            let idx: Vec<usize> = (offset..offset + rows).collect();
                            accumulate(&mut grads[p.0], g.select_rows(&idx));
                        }
                        offset += rows;
                    }
                }
                Op::L2NormalizeRows { input, norms } => {
                    let mut contrib = g.clone();
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let dot: f64 = g.row(r).iter().zip(yr).map(|(a, b)| a * b).sum();
                        for (c, yv) in contrib.row_mut(r).iter_mut().zip(yr) {
                            *c = (*c - yv * dot) / norms[r];
                        }
                    }
                    accumulate(&mut grads[input.0], contrib);
                }
                Op::Clamp { input, lo, hi } => {
                    let contrib = g.zip_with(val(*input), |gv, x| {
                        if x >= *lo && x <= *hi {
                            gv
                        } else {
                            0.0
                        }
                    })?;
                    accumulate(&mut grads[input.0], contrib);
                }
                Op::CrossEntropyRows {
                    logits,
                    targets,
                    probs,
                } => {
                    let s = g.item() / targets.len() as f64;
                    let mut contrib = probs.clone();
                    for (r, &t) in targets.iter().enumerate() {
                        let row = contrib.row_mut(r);
                        row[t] -= 1.0;
                        row.iter_mut().for_each(|v| *v *= s);
                    }
                    accumulate(&mut grads[logits.0], contrib);
                }
                Op::MeanAbsError { pred, target } => {
                    let p = val(*pred);
                    let s = g.item() / p.len() as f64;
                    let contrib = p.zip_with(target, |a, b| {
                        let d = a - b;
                        if d > 0.0 {
                            s
                        } else if d < 0.0 {
                            -s
                        } else {
                            0.0
                        }
                    })?;
                    accumulate(&mut grads[pred.0], contrib);
                }
            }
        }

        // Leaves not reached from the loss: zero gradient, flagged.
        let mut reached: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        for (i, g) in param_grads {
            reached[i] = Some(g);
        }
        let mut report = GradientReport {
            grads: Vec::new(),
            max_abs_grad: 0.0,
            step: 0,
            disconnected: Vec::new(),
        };
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Param { name } = &node.op {
                let g = match reached[i].take() {
                    Some(g) => g,
                    None => {
                        report.disconnected.push(name.clone());
                        Matrix::zeros(node.value.rows(), node.value.cols())
                    }
                };
                if !g.is_finite() {
                    return Err(NumericsError::NonFinite {
                        context: format!("gradient of {name}"),
                    });
                }
                report.max_abs_grad = report.max_abs_grad.max(g.max_abs());
                report.grads.push((name.clone(), g));
            }
        }
        Ok(report)
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    row.iter_mut().for_each(|v| *v /= sum);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[Vec<f64>]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn relu_definition() {
        let mut t = Tape::new();
        let x = t.constant(m(&[vec![-1.0, 0.0, 2.0]]));
        let y = t.relu(x);
        assert_eq!(t.value(y).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn inner_of_self_is_squared_norm() {
        let a = m(&[vec![1.0, -2.0], vec![0.5, 3.0]]);
        let mut t = Tape::new();
        let x = t.constant(a);
        let ip = t.frobenius_inner(x, x).unwrap();
        let n = t.frobenius_norm(x);
        let diff = t.value(ip).item() - t.value(n).item().powi(2);
        assert!(diff.abs() < 1e-12);
    }

    #[test]
    fn row_mean_center_hand_case() {
        let mut t = Tape::new();
        let x = t.constant(m(&[vec![1.0, 3.0], vec![5.0, 7.0]]));
        let y = t.row_mean_center(x);
        assert_eq!(t.value(y).data(), &[-2.0, -2.0, 2.0, 2.0]);
    }

    #[test]
    fn square_derivative() {
        let x0 = Matrix::scalar(3.0);
        let mut t = Tape::new();
        let x = t.param("x", &x0).unwrap();
        let y = t.elementwise_mul(x, x).unwrap();
        let r = t.backward(y).unwrap();
        assert_eq!(r.get("x").unwrap().item(), 6.0);
    }

    #[test]
    fn squared_norm_gradient_is_twice_input() {
        let a0 = m(&[vec![1.0, -2.0, 0.25], vec![4.0, 0.0, -1.5]]);
        let mut t = Tape::new();
        let a = t.param("a", &a0).unwrap();
        let ip = t.frobenius_inner(a, a).unwrap();
        let r = t.backward(ip).unwrap();
        assert_eq!(r.get("a").unwrap(), &a0.scale(2.0));
    }

    #[test]
    fn frozen_leaves_never_reported() {
        let w0 = Matrix::filled(2, 2, 0.5);
        let teacher = Matrix::filled(2, 2, 1.0);
        let mut t = Tape::new();
        let w = t.param("w", &w0).unwrap();
        let f = t.frozen(&teacher);
        let y = t.matmul(f, w).unwrap();
        let loss = t.mean_all(y).unwrap();
        let r = t.backward(loss).unwrap();
        assert_eq!(r.grads.len(), 1);
        assert_eq!(r.grads[0].0, "w");
    }

    #[test]
    fn disconnected_param_flagged_with_zero_gradient() {
        let w0 = Matrix::filled(1, 1, 2.0);
        let u0 = Matrix::filled(3, 1, 1.0);
        let mut t = Tape::new();
        let w = t.param("w", &w0).unwrap();
        let _u = t.param("u", &u0).unwrap();
        let loss = t.elementwise_mul(w, w).unwrap();
        let r = t.backward(loss).unwrap();
        assert_eq!(r.disconnected, vec!["u".to_string()]);
        assert_eq!(r.get("u").unwrap(), &Matrix::zeros(3, 1));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let w0 = Matrix::filled(2, 2, 1.0);
        let mut t = Tape::new();
        let w = t.param("w", &w0).unwrap();
        assert!(matches!(
            t.backward(w),
            Err(NumericsError::NonScalarLoss { shape: (2, 2) })
        ));
    }

    #[test]
    fn duplicate_param_names_rejected() {
        let w0 = Matrix::filled(1, 1, 1.0);
        let mut t = Tape::new();
        t.param("w", &w0).unwrap();
        assert!(matches!(t.param("w", &w0), Err(NumericsError::DuplicateParam(_))));
    }

    #[test]
    fn dropout_mask_must_match() {
        let mut t = Tape::new();
        let x = t.constant(Matrix::zeros(2, 3));
        assert!(t.dropout_with_mask(x, Matrix::zeros(3, 2)).is_err());
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut t = Tape::new();
        let x = t.constant(m(&[vec![1.0, 2.0, 3.0], vec![-5.0, 0.0, 5.0]]));
        let y = t.softmax_rows(x);
        for r in 0..2 {
            let s: f64 = t.value(y).row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
}
