//! Reverse-mode tape over dense 2-D tensors.
//!
//! Every forward call appends one node. `backward` walks the nodes once, in
//! reverse recording order, accumulating vector-Jacobian products into the
//! nodes that require gradients.

use crate::autodiff::scalar::Real;
use crate::autodiff::tensor::{gemm_nt, gemm_tn, Tensor};
use crate::error::{Error, Result};

pub const BATCH_NORM_EPS: f64 = 1e-5;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Per-column batch statistics from a training-mode batch norm.
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Biased (1/B) variance.
    pub var: Vec<T>,
    pub batch: usize,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    LeakyRelu(Var, f64),
    Clamp(Var, f64, f64),
    SoftmaxRows(Var),
    Sum(Var),
    Mean(Var),
    MeanRows(Var),
    RowSquaredNorm(Var),
    CrossEntropyRows { logits: Var, labels: Vec<usize>, probs: Tensor<T> },
    CosineRows(Var, Var),
    ConcatCols(Var, Var),
    SliceCols(Var, usize),
    BatchNorm { x: Var, gamma: Var, xhat: Tensor<T>, inv_std: Vec<T> },
    Dropout(Var, Tensor<T>),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    grad: Option<Tensor<T>>,
    requires_grad: bool,
    op: Op<T>,
}

#[derive(Debug)]
pub struct Tape<T = f64> {
    nodes: Vec<Node<T>>,
    backward_done: bool,
    kink_margin: f64,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn check_same(op: &'static str, a: &Tensor<impl Real>, b: &Tensor<impl Real>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn check_row(op: &'static str, x: &Tensor<impl Real>, r: &Tensor<impl Real>) -> Result<()> {
    if r.rows() != 1 || r.cols() != x.cols() {
        return Err(Error::dim(op, format!("row {:?} against {:?}", r.shape(), x.shape())));
    }
    Ok(())
}

fn sigmoid<T: Real>(x: T) -> T {
    // Branch keeps exp() from overflowing for large |x|.
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn col_sums<T: Real>(g: &Tensor<T>) -> Tensor<T> {
    let mut out = Tensor::zeros(1, g.cols());
    for r in 0..g.rows() {
        for (o, &v) in out.data_mut().iter_mut().zip(g.row(r)) {
            *o += v;
        }
    }
    out
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), backward_done: false, kink_margin: f64::INFINITY }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Smallest distance from any piecewise-linear input (ReLU family, clamp)
    /// to its breakpoint, over nodes that require gradients. Finite-difference
    /// checks are only meaningful when this exceeds the probe step.
    pub fn kink_margin(&self) -> f64 {
        self.kink_margin
    }

    /// Drops all gradients so `backward` may run again.
    pub fn clear_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.backward_done = false;
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, grad: None, requires_grad, op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    fn push(&mut self, name: &'static str, value: Tensor<T>, inputs: &[Var], op: Op<T>) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node { value, grad: None, requires_grad, op });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push("matmul", out, &[a, b], Op::MatMul(a, b))
    }

    /// `x · w + b` with `b` a 1×out row broadcast over rows.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_row(xw, b)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same("add", self.value(a), self.value(b))?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push("add", out, &[a, b], Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same("sub", self.value(a), self.value(b))?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push("sub", out, &[a, b], Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same("mul", self.value(a), self.value(b))?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push("mul", out, &[a, b], Op::Mul(a, b))
    }

    pub fn add_row(&mut self, x: Var, r: Var) -> Result<Var> {
        check_row("add_row", self.value(x), self.value(r))?;
        let (xv, rv) = (self.value(x), self.value(r).data());
        let out = Tensor::from_fn(xv.rows(), xv.cols(), |i, j| xv.get(i, j) + rv[j]);
        self.push("add_row", out, &[x, r], Op::AddRow(x, r))
    }

    pub fn mul_row(&mut self, x: Var, r: Var) -> Result<Var> {
        check_row("mul_row", self.value(x), self.value(r))?;
        let (xv, rv) = (self.value(x), self.value(r).data());
        let out = Tensor::from_fn(xv.rows(), xv.cols(), |i, j| xv.get(i, j) * rv[j]);
        self.push("mul_row", out, &[x, r], Op::MulRow(x, r))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        let k = T::from_f64(s);
        let out = self.value(x).map(|v| v * k);
        self.push("scale", out, &[x], Op::Scale(x, s))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(sigmoid);
        self.push("sigmoid", out, &[x], Op::Sigmoid(x))
    }

    fn note_kink(&mut self, x: Var, f: impl Fn(f64) -> f64) {
        if self.nodes[x.0].requires_grad {
            let m = self.nodes[x.0].value.data().iter().fold(f64::INFINITY, |m, v| m.min(f(v.value())));
            self.kink_margin = self.kink_margin.min(m);
        }
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        self.note_kink(x, f64::abs);
        let s = T::from_f64(slope);
        let out = self.value(x).map(|v| if v > T::zero() { v } else { v * s });
        self.push("leaky_relu", out, &[x], Op::LeakyRelu(x, slope))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.leaky_relu(x, 0.0)
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        if lo > hi {
            return Err(Error::invalid(format!("clamp bounds {lo} > {hi}")));
        }
        self.note_kink(x, |v| (v - lo).abs().min((v - hi).abs()));
        let (l, h) = (T::from_f64(lo), T::from_f64(hi));
        let out = self.value(x).map(|v| if v < l { l } else if v > h { h } else { v });
        self.push("clamp", out, &[x], Op::Clamp(x, lo, hi))
    }

    /// Softmax across the columns of each row.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let mut out = Tensor::zeros(xv.rows(), xv.cols());
        for r in 0..xv.rows() {
            let row = xv.row(r);
            let m = row.iter().copied().fold(row[0], |m, v| if v > m { v } else { m });
            let mut z = T::zero();
            for (o, &v) in out.row_mut(r).iter_mut().zip(row) {
                *o = (v - m).exp();
                z += *o;
            }
            for o in out.row_mut(r) {
                *o = *o / z;
            }
        }
        self.push("softmax", out, &[x], Op::SoftmaxRows(x))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().fold(T::zero(), |a, &v| a + v);
        self.push("sum", Tensor::scalar(s), &[x], Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.is_empty() {
            return Err(Error::dim("mean", "empty tensor"));
        }
        let n = T::from_f64(xv.len() as f64);
        let s = xv.data().iter().fold(T::zero(), |a, &v| a + v) / n;
        self.push("mean", Tensor::scalar(s), &[x], Op::Mean(x))
    }

    /// Column means: B×d → 1×d.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.rows() == 0 {
            return Err(Error::dim("mean_rows", "no rows"));
        }
        // Running mean: exact when all rows are equal, unlike sum-then-divide.
        let mut out = Tensor::from_vec(1, xv.cols(), xv.row(0).to_vec())?;
        for r in 1..xv.rows() {
            let k = T::from_f64((r + 1) as f64);
            for (m, &v) in out.data_mut().iter_mut().zip(xv.row(r)) {
                *m += (v - *m) / k;
            }
        }
        self.push("mean_rows", out, &[x], Op::MeanRows(x))
    }

    /// Squared L2 norm of each row: B×d → B×1.
    pub fn squared_l2(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let out = Tensor::from_fn(xv.rows(), 1, |r, _| xv.row(r).iter().fold(T::zero(), |a, &v| a + v * v));
        self.push("squared_l2", out, &[x], Op::RowSquaredNorm(x))
    }

    /// Mean squared error over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(b, a)?;
        let sq = self.mul(d, d)?;
        self.mean(sq)
    }

    /// Per-row cross entropy `-log softmax(logits)[label]`: B×C → B×1.
    pub fn cross_entropy_rows(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        if labels.len() != lv.rows() {
            return Err(Error::dim("cross_entropy", format!("{} labels for {} rows", labels.len(), lv.rows())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= lv.cols()) {
            return Err(Error::invalid(format!("label {bad} out of range for {} classes", lv.cols())));
        }
        let mut probs = Tensor::zeros(lv.rows(), lv.cols());
        let mut out = Tensor::zeros(lv.rows(), 1);
        for (r, &label) in labels.iter().enumerate() {
            let row = lv.row(r);
            let m = row.iter().copied().fold(row[0], |m, v| if v > m { v } else { m });
            let mut z = T::zero();
            for (p, &v) in probs.row_mut(r).iter_mut().zip(row) {
                *p = (v - m).exp();
                z += *p;
            }
            for p in probs.row_mut(r) {
                *p = *p / z;
            }
            out.set(r, 0, z.ln() + m - row[label]);
        }
        self.push(
            "cross_entropy",
            out,
            &[logits],
            Op::CrossEntropyRows { logits, labels: labels.to_vec(), probs },
        )
    }

    /// Mean cross entropy as a 1×1 loss.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let rows = self.cross_entropy_rows(logits, labels)?;
        self.mean(rows)
    }

    /// Row-wise cosine similarity: B×d, B×d → B×1. Rows with a zero vector
    /// on either side score 0 and pass no gradient.
    pub fn cosine_similarity(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same("cosine_similarity", self.value(a), self.value(b))?;
        let (av, bv) = (self.value(a), self.value(b));
        let out = Tensor::from_fn(av.rows(), 1, |r, _| cosine_row(av.row(r), bv.row(r)).0);
        self.push("cosine_similarity", out, &[a, b], Op::CosineRows(a, b))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rows() != bv.rows() {
            return Err(Error::dim("concat_cols", format!("{} vs {} rows", av.rows(), bv.rows())));
        }
        let (ca, cb) = (av.cols(), bv.cols());
        let out = Tensor::from_fn(av.rows(), ca + cb, |r, c| if c < ca { av.get(r, c) } else { bv.get(r, c - ca) });
        self.push("concat_cols", out, &[a, b], Op::ConcatCols(a, b))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let xv = self.value(x);
        if start > end || end > xv.cols() {
            return Err(Error::dim("slice_cols", format!("{start}..{end} of {} columns", xv.cols())));
        }
        let out = Tensor::from_fn(xv.rows(), end - start, |r, c| xv.get(r, start + c));
        self.push("slice_cols", out, &[x], Op::SliceCols(x, start))
    }

    /// Training-mode batch norm using the batch's own statistics.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var) -> Result<(Var, BatchStats<T>)> {
        let xv = self.value(x);
        check_row("batch_norm", xv, self.value(gamma))?;
        check_row("batch_norm", xv, self.value(beta))?;
        let (b, d) = xv.shape();
        if b == 0 {
            return Err(Error::dim("batch_norm", "empty batch"));
        }
        let n = T::from_f64(b as f64);
        let eps = T::from_f64(BATCH_NORM_EPS);
        let mut mean = vec![T::zero(); d];
        for r in 0..b {
            for (m, &v) in mean.iter_mut().zip(xv.row(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m = *m / n);
        let mut var = vec![T::zero(); d];
        for r in 0..b {
            for ((s, &v), &m) in var.iter_mut().zip(xv.row(r)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|s| *s = *s / n);
        let inv_std: Vec<T> = var.iter().map(|&s| T::one() / (s + eps).sqrt()).collect();
        let xhat = Tensor::from_fn(b, d, |r, c| (xv.get(r, c) - mean[c]) * inv_std[c]);
        let g = self.value(gamma).data();
        let out = Tensor::from_fn(b, d, |r, c| xhat.get(r, c) * g[c]);
        let scaled = self.push("batch_norm", out, &[x, gamma], Op::BatchNorm { x, gamma, xhat, inv_std })?;
        let shifted = self.add_row(scaled, beta)?;
        Ok((shifted, BatchStats { mean, var, batch: b }))
    }

    /// Inference-mode batch norm with fixed statistics.
    pub fn batch_norm_eval(&mut self, x: Var, gamma: Var, beta: Var, mean: &[T], var: &[T]) -> Result<Var> {
        let d = self.value(x).cols();
        if mean.len() != d || var.len() != d {
            return Err(Error::dim("batch_norm", format!("{} running stats for {d} columns", mean.len())));
        }
        let eps = T::from_f64(BATCH_NORM_EPS);
        let neg_mean = self.constant(Tensor::row_vector(mean.iter().map(|&m| -m).collect()));
        let inv = self.constant(Tensor::row_vector(var.iter().map(|&s| T::one() / (s + eps).sqrt()).collect()));
        let centered = self.add_row(x, neg_mean)?;
        let xhat = self.mul_row(centered, inv)?;
        let scaled = self.mul_row(xhat, gamma)?;
        self.add_row(scaled, beta)
    }

    /// Inverted dropout with an explicit 0/1 keep mask. Identity when `train`
    /// is false.
    pub fn dropout(&mut self, x: Var, mask: &Tensor<f64>, rate: f64, train: bool) -> Result<Var> {
        if !train || rate == 0.0 {
            return Ok(x);
        }
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::invalid(format!("dropout rate {rate} outside [0, 1)")));
        }
        check_same("dropout", self.value(x), mask)?;
        let keep = 1.0 / (1.0 - rate);
        let scaled: Tensor<T> = mask.convert(|m| T::from_f64(m * keep));
        let out = self.value(x).zip_map(&scaled, |a, m| a * m);
        self.push("dropout", out, &[x], Op::Dropout(x, scaled))
    }

    /// Populates gradients of `loss` on every node that requires them.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::BackwardTwice);
        }
        let (rows, cols) = self.value(loss).shape();
        if (rows, cols) != (1, 1) {
            return Err(Error::NonScalarLoss { rows, cols });
        }
        self.backward_done = true;
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(Tensor::scalar(T::one()));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad || matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = self.nodes[i].grad.take() else { continue };
            let contributions = self.vjp(i, &g)?;
            self.nodes[i].grad = Some(g);
            for (v, d) in contributions {
                let node = &mut self.nodes[v.0];
                match &mut node.grad {
                    Some(acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(d.data()) {
                            *a += *b;
                        }
                    }
                    None => node.grad = Some(d),
                }
            }
        }
        for n in &self.nodes {
            if let Some(g) = &n.grad {
                if !g.all_finite() {
                    return Err(Error::NonFinite { op: "backward" });
                }
            }
        }
        Ok(())
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn vjp(&self, i: usize, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let node = &self.nodes[i];
        let y = &node.value;
        let mut out = Vec::with_capacity(2);
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    let mut ga = Tensor::zeros(av.rows(), av.cols());
                    gemm_nt(g, bv, &mut ga);
                    out.push((*a, ga));
                }
                if self.needs(*b) {
                    let mut gb = Tensor::zeros(bv.rows(), bv.cols());
                    gemm_tn(av, g, &mut gb);
                    out.push((*b, gb));
                }
            }
            Op::Add(a, b) => {
                if self.needs(*a) {
                    out.push((*a, g.clone()));
                }
                if self.needs(*b) {
                    out.push((*b, g.clone()));
                }
            }
            Op::Sub(a, b) => {
                if self.needs(*a) {
                    out.push((*a, g.clone()));
                }
                if self.needs(*b) {
                    out.push((*b, g.map(|v| -v)));
                }
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    out.push((*a, g.zip_map(self.value(*b), |x, y| x * y)));
                }
                if self.needs(*b) {
                    out.push((*b, g.zip_map(self.value(*a), |x, y| x * y)));
                }
            }
            Op::AddRow(x, r) => {
                if self.needs(*x) {
                    out.push((*x, g.clone()));
                }
                if self.needs(*r) {
                    out.push((*r, col_sums(g)));
                }
            }
            Op::MulRow(x, r) => {
                let (xv, rv) = (self.value(*x), self.value(*r).data());
                if self.needs(*x) {
                    out.push((*x, Tensor::from_fn(g.rows(), g.cols(), |i, j| g.get(i, j) * rv[j])));
                }
                if self.needs(*r) {
                    out.push((*r, col_sums(&g.zip_map(xv, |a, b| a * b))));
                }
            }
            Op::Scale(x, s) => {
                let k = T::from_f64(*s);
                out.push((*x, g.map(|v| v * k)));
            }
            Op::Sigmoid(x) => {
                out.push((*x, g.zip_map(y, |gv, s| gv * s * (T::one() - s))));
            }
            Op::LeakyRelu(x, slope) => {
                let s = T::from_f64(*slope);
                out.push((*x, g.zip_map(self.value(*x), |gv, xv| if xv > T::zero() { gv } else { gv * s })));
            }
            Op::Clamp(x, lo, hi) => {
                let (l, h) = (T::from_f64(*lo), T::from_f64(*hi));
                out.push((*x, g.zip_map(self.value(*x), |gv, xv| if xv > l && xv < h { gv } else { T::zero() })));
            }
            Op::SoftmaxRows(x) => {
                let mut gx = Tensor::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let dot = g.row(r).iter().zip(y.row(r)).fold(T::zero(), |a, (&gv, &yv)| a + gv * yv);
                    for ((o, &gv), &yv) in gx.row_mut(r).iter_mut().zip(g.row(r)).zip(y.row(r)) {
                        *o = yv * (gv - dot);
                    }
                }
                out.push((*x, gx));
            }
            Op::Sum(x) => {
                let xv = self.value(*x);
                out.push((*x, Tensor::full(xv.rows(), xv.cols(), g.item())));
            }
            Op::Mean(x) => {
                let xv = self.value(*x);
                let v = g.item() / T::from_f64(xv.len() as f64);
                out.push((*x, Tensor::full(xv.rows(), xv.cols(), v)));
            }
            Op::MeanRows(x) => {
                let xv = self.value(*x);
                let n = T::from_f64(xv.rows() as f64);
                out.push((*x, Tensor::from_fn(xv.rows(), xv.cols(), |_, c| g.get(0, c) / n)));
            }
            Op::RowSquaredNorm(x) => {
                let xv = self.value(*x);
                let two = T::from_f64(2.0);
                out.push((*x, Tensor::from_fn(xv.rows(), xv.cols(), |r, c| two * xv.get(r, c) * g.get(r, 0))));
            }
            Op::CrossEntropyRows { logits, labels, probs } => {
                let mut gl = probs.clone();
                for (r, &label) in labels.iter().enumerate() {
                    let v = gl.get(r, label) - T::one();
                    gl.set(r, label, v);
                    let gr = g.get(r, 0);
                    for p in gl.row_mut(r) {
                        *p *= gr;
                    }
                }
                out.push((*logits, gl));
            }
            Op::CosineRows(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let mut ga = Tensor::zeros(av.rows(), av.cols());
                let mut gb = Tensor::zeros(bv.rows(), bv.cols());
                for r in 0..av.rows() {
                    let (c, na, nb) = cosine_row(av.row(r), bv.row(r));
                    if na == T::zero() || nb == T::zero() {
                        continue;
                    }
                    let gr = g.get(r, 0);
                    let nab = na * nb;
                    for j in 0..av.cols() {
                        let (x, z) = (av.get(r, j), bv.get(r, j));
                        ga.set(r, j, gr * (z / nab - c * x / (na * na)));
                        gb.set(r, j, gr * (x / nab - c * z / (nb * nb)));
                    }
                }
                if self.needs(*a) {
                    out.push((*a, ga));
                }
                if self.needs(*b) {
                    out.push((*b, gb));
                }
            }
            Op::ConcatCols(a, b) => {
                let ca = self.value(*a).cols();
                if self.needs(*a) {
                    out.push((*a, Tensor::from_fn(g.rows(), ca, |r, c| g.get(r, c))));
                }
                if self.needs(*b) {
                    let cb = self.value(*b).cols();
                    out.push((*b, Tensor::from_fn(g.rows(), cb, |r, c| g.get(r, ca + c))));
                }
            }
            Op::SliceCols(x, start) => {
                let xv = self.value(*x);
                let mut gx = Tensor::zeros(xv.rows(), xv.cols());
                for r in 0..g.rows() {
                    gx.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                }
                out.push((*x, gx));
            }
            Op::BatchNorm { x, gamma, xhat, inv_std } => {
                let (b, d) = xhat.shape();
                let gv = self.value(*gamma).data();
                if self.needs(*gamma) {
                    out.push((*gamma, col_sums(&g.zip_map(xhat, |a, h| a * h))));
                }
                if self.needs(*x) {
                    let n = T::from_f64(b as f64);
                    let mut sum_d = vec![T::zero(); d];
                    let mut sum_dx = vec![T::zero(); d];
                    for r in 0..b {
                        for c in 0..d {
                            let dh = g.get(r, c) * gv[c];
                            sum_d[c] += dh;
                            sum_dx[c] += dh * xhat.get(r, c);
                        }
                    }
                    let gx = Tensor::from_fn(b, d, |r, c| {
                        let dh = g.get(r, c) * gv[c];
                        inv_std[c] * (n * dh - sum_d[c] - xhat.get(r, c) * sum_dx[c]) / n
                    });
                    out.push((*x, gx));
                }
            }
            Op::Dropout(x, mask) => {
                out.push((*x, g.zip_map(mask, |a, m| a * m)));
            }
        }
        Ok(out)
    }
}

/// (cosine, ‖a‖, ‖b‖); cosine is 0 when either norm is 0.
pub(crate) fn cosine_row<T: Real>(a: &[T], b: &[T]) -> (T, T, T) {
    let mut dot = T::zero();
    let mut na = T::zero();
    let mut nb = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    let (na, nb) = (na.sqrt(), nb.sqrt());
    if na == T::zero() || nb == T::zero() {
        return (T::zero(), na, nb);
    }
    let mut c = dot / (na * nb);
    if c > T::one() {
        c = T::one();
    } else if c < -T::one() {
        c = -T::one();
    }
    (c, na, nb)
}
