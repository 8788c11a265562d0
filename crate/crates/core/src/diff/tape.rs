use super::kernels::{gemm, gemm_nt, gemm_tn};
use super::tensor::Tensor;
use crate::{par, Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Reduction / concatenation axis, numpy style: `Zero` runs down the rows,
/// `One` runs across the columns.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Zero,
    One,
}

/// Smallest input accepted by `log`; lower values are clamped.
pub const LOG_FLOOR: f64 = 1e-30;
const NORM_FLOOR: f64 = 1e-12;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Concat(Vec<Var>, Axis),
    RowSoftmax(Var),
    MaskedRowSoftmax(Var),
    SegmentSoftmax(Var, Vec<usize>),
    LeakyRelu(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    AbsPow(Var, f64),
    ClampMax(Var, f64),
    MaxScalar(Var, f64),
    SumAll(Var),
    Sum(Var, Axis),
    L2NormalizeRows(Var),
    GatherRows(Var, Vec<usize>),
    ScatterAddRows(Var, Vec<usize>),
    Dropout(Var, Vec<f64>),
    Transpose(Var),
    Reshape(Var),
    ScaleRows(Var, Var),
    AddRow(Var, Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of the primitive operations of one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the output with respect to `v`; all zeros when `v` does not
    /// influence the output.
    pub fn get(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    pub fn take(&mut self, v: Var) -> Tensor {
        self.grads[v.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("shapes checked")
}

fn row_softmax_in_place(data: &mut [f64], cols: usize, mask: Option<&[f64]>) {
    par::for_each_row(data, cols, |i, row| {
        let m = mask.map(|m| &m[i * cols..(i + 1) * cols]);
        let keep = |j: usize| m.is_none_or(|m| m[j] != 0.0);
        let mx = row
            .iter()
            .enumerate()
            .filter(|&(j, _)| keep(j))
            .map(|(_, &x)| x)
            .fold(f64::NEG_INFINITY, f64::max);
        if mx == f64::NEG_INFINITY {
            row.iter_mut().for_each(|x| *x = 0.0);
            return;
        }
        let mut total = 0.0;
        for (j, x) in row.iter_mut().enumerate() {
            if keep(j) {
                *x = (*x - mx).exp();
                total += *x;
            } else {
                *x = 0.0;
            }
        }
        row.iter_mut().for_each(|x| *x /= total);
    });
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn unary(&mut self, x: Var, value: Tensor, op: Op) -> Var {
        let rg = self.nodes[x.0].requires_grad;
        self.push(value, op, rg)
    }

    fn binary(&mut self, a: Var, b: Var, value: Tensor, op: Op) -> Var {
        let rg = self.nodes[a.0].requires_grad || self.nodes[b.0].requires_grad;
        self.push(value, op, rg)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.cols() != tb.rows() {
            return Err(Error::shape(
                "matmul",
                format!("{:?} x {:?}", ta.shape(), tb.shape()),
            ));
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        let out = Tensor::matrix(m, n, gemm(ta.data(), tb.data(), m, k, n));
        Ok(self.binary(a, b, out, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.value(a), self.value(b))?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x + y);
        Ok(self.binary(a, b, out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("sub", self.value(a), self.value(b))?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x - y);
        Ok(self.binary(a, b, out, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mul", self.value(a), self.value(b))?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x * y);
        Ok(self.binary(a, b, out, Op::Mul(a, b)))
    }

    /// Elementwise quotient.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("div", self.value(a), self.value(b))?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x / y);
        Ok(self.binary(a, b, out, Op::Div(a, b)))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| v * c);
        self.unary(x, out, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| v + c);
        self.unary(x, out, Op::AddScalar(x))
    }

    pub fn concat(&mut self, xs: &[Var], axis: Axis) -> Result<Var> {
        let first = xs
            .first()
            .ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let tensors: Vec<&Tensor> = xs.iter().map(|&v| self.value(v)).collect();
        if tensors.iter().any(|t| t.shape().len() != 2) {
            return Err(Error::shape("concat", "inputs must be matrices"));
        }
        let out = match axis {
            Axis::Zero => {
                let cols = tensors[0].cols();
                if let Some(t) = tensors.iter().find(|t| t.cols() != cols) {
                    return Err(Error::shape(
                        "concat",
                        format!("column count {} vs {}", cols, t.cols()),
                    ));
                }
                let rows = tensors.iter().map(|t| t.rows()).sum();
                let data = tensors.iter().flat_map(|t| t.data().iter().copied()).collect();
                Tensor::matrix(rows, cols, data)
            }
            Axis::One => {
                let rows = tensors[0].rows();
                if let Some(t) = tensors.iter().find(|t| t.rows() != rows) {
                    return Err(Error::shape(
                        "concat",
                        format!("row count {} vs {}", rows, t.rows()),
                    ));
                }
                let cols: usize = tensors.iter().map(|t| t.cols()).sum();
                let mut data = Vec::with_capacity(rows * cols);
                for i in 0..rows {
                    for t in &tensors {
                        data.extend_from_slice(t.row(i));
                    }
                }
                Tensor::matrix(rows, cols, data)
            }
        };
        let rg = xs.iter().any(|v| self.nodes[v.0].requires_grad);
        let _ = first;
        Ok(self.push(out, Op::Concat(xs.to_vec(), axis), rg))
    }

    pub fn row_softmax(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.shape().len() != 2 {
            return Err(Error::shape("row_softmax", format!("{:?}", t.shape())));
        }
        let mut out = t.clone();
        let cols = out.cols();
        row_softmax_in_place(out.data_mut(), cols, None);
        Ok(self.unary(x, out, Op::RowSoftmax(x)))
    }

    /// Row softmax restricted to entries where `mask` is true; masked entries
    /// get exactly zero weight. A fully masked row is all zeros.
    pub fn masked_row_softmax(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let t = self.value(x);
        if t.shape().len() != 2 || mask.len() != t.len() {
            return Err(Error::shape(
                "masked_row_softmax",
                format!("{:?} with mask of {}", t.shape(), mask.len()),
            ));
        }
        let m: Vec<f64> = mask.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        let mut out = t.clone();
        let cols = out.cols();
        row_softmax_in_place(out.data_mut(), cols, Some(&m));
        Ok(self.unary(x, out, Op::MaskedRowSoftmax(x)))
    }

    /// Softmax over groups of elements: element `e` belongs to group
    /// `segments[e]`. Used for attention over variable-size neighborhoods.
    pub fn segment_softmax(&mut self, x: Var, segments: &[usize], groups: usize) -> Result<Var> {
        let t = self.value(x);
        if segments.len() != t.len() {
            return Err(Error::shape(
                "segment_softmax",
                format!("{} values, {} segment ids", t.len(), segments.len()),
            ));
        }
        if let Some(&s) = segments.iter().find(|&&s| s >= groups) {
            return Err(Error::shape(
                "segment_softmax",
                format!("segment id {s} out of range {groups}"),
            ));
        }
        let mut mx = vec![f64::NEG_INFINITY; groups];
        for (&v, &s) in t.data().iter().zip(segments) {
            mx[s] = mx[s].max(v);
        }
        let mut out = t.clone();
        let mut total = vec![0.0; groups];
        for (v, &s) in out.data_mut().iter_mut().zip(segments) {
            *v = (*v - mx[s]).exp();
            total[s] += *v;
        }
        for (v, &s) in out.data_mut().iter_mut().zip(segments) {
            *v /= total[s];
        }
        Ok(self.unary(x, out, Op::SegmentSoftmax(x, segments.to_vec())))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let out = self.value(x).map(|v| if v > 0.0 { v } else { slope * v });
        self.unary(x, out, Op::LeakyRelu(x, slope))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::tanh);
        self.unary(x, out, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        self.unary(x, out, Op::Sigmoid(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::exp);
        self.unary(x, out, Op::Exp(x))
    }

    /// Natural log with inputs clamped to at least [`LOG_FLOOR`].
    pub fn log(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(LOG_FLOOR).ln());
        self.unary(x, out, Op::Log(x))
    }

    /// `|x|^k`, elementwise.
    pub fn abs_pow(&mut self, x: Var, k: f64) -> Var {
        let out = self.value(x).map(|v| v.abs().powf(k));
        self.unary(x, out, Op::AbsPow(x, k))
    }

    /// `min(x, c)`; clamped entries pass no gradient.
    pub fn clamp_max(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| v.min(c));
        self.unary(x, out, Op::ClampMax(x, c))
    }

    /// `max(x, c)`; clamped entries pass no gradient.
    pub fn max_scalar(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| v.max(c));
        self.unary(x, out, Op::MaxScalar(x, c))
    }

    /// Sum of every element, as a rank-0 tensor.
    pub fn sum_all(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        self.unary(x, out, Op::SumAll(x))
    }

    /// `Axis::Zero` gives a `[1×c]` row of column sums, `Axis::One` an `[r×1]`
    /// column of row sums.
    pub fn sum(&mut self, x: Var, axis: Axis) -> Result<Var> {
        let t = self.value(x);
        if t.shape().len() != 2 {
            return Err(Error::shape("sum", format!("{:?}", t.shape())));
        }
        let (r, c) = (t.rows(), t.cols());
        let out = match axis {
            Axis::Zero => {
                let mut acc = vec![0.0; c];
                for i in 0..r {
                    for (a, &v) in acc.iter_mut().zip(t.row(i)) {
                        *a += v;
                    }
                }
                Tensor::matrix(1, c, acc)
            }
            Axis::One => Tensor::matrix(r, 1, (0..r).map(|i| t.row(i).iter().sum()).collect()),
        };
        Ok(self.unary(x, out, Op::Sum(x, axis)))
    }

    pub fn mean(&mut self, x: Var, axis: Axis) -> Result<Var> {
        let n = match axis {
            Axis::Zero => self.value(x).rows(),
            Axis::One => self.value(x).cols(),
        };
        let s = self.sum(x, axis)?;
        Ok(self.scale(s, 1.0 / n.max(1) as f64))
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = self.value(x).len().max(1);
        let s = self.sum_all(x);
        self.scale(s, 1.0 / n as f64)
    }

    /// Scales every row to unit Euclidean norm (zero rows stay zero).
    pub fn l2_normalize_rows(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.shape().len() != 2 {
            return Err(Error::shape("l2_normalize_rows", format!("{:?}", t.shape())));
        }
        let mut out = t.clone();
        let cols = out.cols();
        par::for_each_row(out.data_mut(), cols, |_, row| {
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(NORM_FLOOR);
            row.iter_mut().for_each(|v| *v /= n);
        });
        Ok(self.unary(x, out, Op::L2NormalizeRows(x)))
    }

    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let t = self.value(x);
        if t.shape().len() != 2 {
            return Err(Error::shape("gather_rows", format!("{:?}", t.shape())));
        }
        if let Some(&i) = idx.iter().find(|&&i| i >= t.rows()) {
            return Err(Error::shape(
                "gather_rows",
                format!("row {i} out of range for {:?}", t.shape()),
            ));
        }
        let out = t.select_rows(idx);
        Ok(self.unary(x, out, Op::GatherRows(x, idx.to_vec())))
    }

    /// `out[idx[k]] += x[k]` into a zero `[rows×c]` matrix.
    pub fn scatter_add_rows(&mut self, x: Var, idx: &[usize], rows: usize) -> Result<Var> {
        let t = self.value(x);
        if t.shape().len() != 2 || idx.len() != t.rows() {
            return Err(Error::shape(
                "scatter_add_rows",
                format!("{:?} with {} indices", t.shape(), idx.len()),
            ));
        }
        if let Some(&i) = idx.iter().find(|&&i| i >= rows) {
            return Err(Error::shape(
                "scatter_add_rows",
                format!("target row {i} out of range {rows}"),
            ));
        }
        let c = t.cols();
        let mut out = Tensor::zeros(&[rows, c]);
        for (k, &i) in idx.iter().enumerate() {
            for (o, &v) in out.row_mut(i).iter_mut().zip(t.row(k)) {
                *o += v;
            }
        }
        Ok(self.unary(x, out, Op::ScatterAddRows(x, idx.to_vec())))
    }

    /// Multiplies elementwise by a precomputed mask (see
    /// [`dropout_mask`](super::dropout_mask)).
    pub fn dropout(&mut self, x: Var, mask: Vec<f64>) -> Result<Var> {
        let t = self.value(x);
        if mask.len() != t.len() {
            return Err(Error::shape(
                "dropout",
                format!("{:?} with mask of {}", t.shape(), mask.len()),
            ));
        }
        let data = t.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let out = Tensor::new(t.shape().to_vec(), data)?;
        Ok(self.unary(x, out, Op::Dropout(x, mask)))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.shape().len() != 2 {
            return Err(Error::shape("transpose", format!("{:?}", t.shape())));
        }
        let out = t.transpose();
        Ok(self.unary(x, out, Op::Transpose(x)))
    }

    /// Same data, row-major, under a new shape of equal size.
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x);
        let out = Tensor::new(shape.to_vec(), t.data().to_vec())
            .ok()
            .filter(|o| o.len() == t.len())
            .ok_or_else(|| Error::shape("reshape", format!("{:?} to {:?}", t.shape(), shape)))?;
        Ok(self.unary(x, out, Op::Reshape(x)))
    }

    /// `x [r×c]` with row `i` multiplied by `s[i]`, `s [r×1]`.
    pub fn scale_rows(&mut self, x: Var, s: Var) -> Result<Var> {
        let (tx, ts) = (self.value(x), self.value(s));
        if tx.shape().len() != 2 || ts.shape() != [tx.rows(), 1] {
            return Err(Error::shape(
                "scale_rows",
                format!("{:?} by {:?}", tx.shape(), ts.shape()),
            ));
        }
        let mut out = tx.clone();
        let sv = ts.data();
        let cols = out.cols();
        par::for_each_row(out.data_mut(), cols, |i, row| {
            row.iter_mut().for_each(|v| *v *= sv[i]);
        });
        Ok(self.binary(x, s, out, Op::ScaleRows(x, s)))
    }

    /// `x [r×c]` plus the row vector `b [1×c]` on every row.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(b));
        if tx.shape().len() != 2 || tb.shape() != [1, tx.cols()] {
            return Err(Error::shape(
                "add_row",
                format!("{:?} plus {:?}", tx.shape(), tb.shape()),
            ));
        }
        let mut out = tx.clone();
        let bv = tb.data();
        let cols = out.cols();
        par::for_each_row(out.data_mut(), cols, |_, row| {
            row.iter_mut().zip(bv).for_each(|(v, b)| *v += b);
        });
        Ok(self.binary(x, b, out, Op::AddRow(x, b)))
    }

    /// Reverse pass from a scalar output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out = self.value(output);
        if out.len() != 1 || out.shape().len() > 1 {
            return Err(Error::shape(
                "backward",
                format!("output must be scalar, got {:?}", out.shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Tensor::full(out.shape(), 1.0));

        for id in (0..=output.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else {
                continue;
            };
            self.backprop_node(node, &g, &mut grads);
            grads[id] = Some(g);
        }
        grads.resize(self.nodes.len(), None);
        // Only leaves that asked for gradients are meaningful to callers.
        for (g, node) in grads.iter_mut().zip(&self.nodes) {
            if !node.requires_grad {
                *g = None;
            }
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop_node(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                if self.needs(*a) {
                    let ga = gemm_nt(g.data(), tb.data(), m, n, k);
                    accumulate(grads, *a, Tensor::matrix(m, k, ga));
                }
                if self.needs(*b) {
                    let gb = gemm_tn(ta.data(), g.data(), m, k, n);
                    accumulate(grads, *b, Tensor::matrix(k, n, gb));
                }
            }
            Op::Add(a, b) => {
                if self.needs(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if self.needs(*b) {
                    accumulate(grads, *b, g.clone());
                }
            }
            Op::Sub(a, b) => {
                if self.needs(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if self.needs(*b) {
                    accumulate(grads, *b, g.map(|v| -v));
                }
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    accumulate(grads, *a, zip_map(g, self.value(*b), |g, y| g * y));
                }
                if self.needs(*b) {
                    accumulate(grads, *b, zip_map(g, self.value(*a), |g, x| g * x));
                }
            }
            Op::Div(a, b) => {
                let tb = self.value(*b);
                if self.needs(*a) {
                    accumulate(grads, *a, zip_map(g, tb, |g, d| g / d));
                }
                if self.needs(*b) {
                    // d(a/b)/db = -(a/b)/b = -y/b
                    let gy = zip_map(g, y, |g, y| g * y);
                    accumulate(grads, *b, zip_map(&gy, tb, |gy, d| -gy / d));
                }
            }
            Op::Scale(x, c) => accumulate(grads, *x, g.map(|v| v * c)),
            Op::AddScalar(x) => accumulate(grads, *x, g.clone()),
            Op::Concat(xs, axis) => {
                let mut offset = 0;
                for &x in xs {
                    let t = self.value(x);
                    let (r, c) = (t.rows(), t.cols());
                    let part = match axis {
                        Axis::Zero => {
                            let cols = g.cols();
                            Tensor::matrix(r, c, g.data()[offset * cols..(offset + r) * cols].to_vec())
                        }
                        Axis::One => {
                            let mut d = Vec::with_capacity(r * c);
                            for i in 0..r {
                                d.extend_from_slice(&g.row(i)[offset..offset + c]);
                            }
                            Tensor::matrix(r, c, d)
                        }
                    };
                    offset += match axis {
                        Axis::Zero => r,
                        Axis::One => c,
                    };
                    if self.needs(x) {
                        accumulate(grads, x, part);
                    }
                }
            }
            Op::RowSoftmax(x) | Op::MaskedRowSoftmax(x) => {
                let cols = y.cols();
                let mut gx = g.clone();
                let yd = y.data();
                par::for_each_row(gx.data_mut(), cols, |i, row| {
                    let yr = &yd[i * cols..(i + 1) * cols];
                    let dot: f64 = row.iter().zip(yr).map(|(g, y)| g * y).sum();
                    row.iter_mut().zip(yr).for_each(|(g, y)| *g = y * (*g - dot));
                });
                accumulate(grads, *x, gx);
            }
            Op::SegmentSoftmax(x, segments) => {
                let groups = segments.iter().max().map_or(0, |m| m + 1);
                let mut dot = vec![0.0; groups];
                for ((&gv, &yv), &s) in g.data().iter().zip(y.data()).zip(segments) {
                    dot[s] += gv * yv;
                }
                let data = g
                    .data()
                    .iter()
                    .zip(y.data())
                    .zip(segments)
                    .map(|((&gv, &yv), &s)| yv * (gv - dot[s]))
                    .collect();
                accumulate(grads, *x, Tensor::new(y.shape().to_vec(), data).unwrap());
            }
            Op::LeakyRelu(x, slope) => {
                let gx = zip_map(g, self.value(*x), |g, v| if v > 0.0 { g } else { g * slope });
                accumulate(grads, *x, gx);
            }
            Op::Tanh(x) => accumulate(grads, *x, zip_map(g, y, |g, y| g * (1.0 - y * y))),
            Op::Sigmoid(x) => accumulate(grads, *x, zip_map(g, y, |g, y| g * y * (1.0 - y))),
            Op::Exp(x) => accumulate(grads, *x, zip_map(g, y, |g, y| g * y)),
            Op::Log(x) => {
                let gx = zip_map(g, self.value(*x), |g, v| if v >= LOG_FLOOR { g / v } else { 0.0 });
                accumulate(grads, *x, gx);
            }
            Op::AbsPow(x, k) => {
                let gx = zip_map(g, self.value(*x), |g, v| {
                    if v == 0.0 {
                        0.0
                    } else {
                        g * k * v.abs().powf(k - 1.0) * v.signum()
                    }
                });
                accumulate(grads, *x, gx);
            }
            Op::ClampMax(x, c) => {
                let gx = zip_map(g, self.value(*x), |g, v| if v <= *c { g } else { 0.0 });
                accumulate(grads, *x, gx);
            }
            Op::MaxScalar(x, c) => {
                let gx = zip_map(g, self.value(*x), |g, v| if v >= *c { g } else { 0.0 });
                accumulate(grads, *x, gx);
            }
            Op::SumAll(x) => {
                let t = self.value(*x);
                accumulate(grads, *x, Tensor::full(t.shape(), g.item()));
            }
            Op::Sum(x, axis) => {
                let t = self.value(*x);
                let (r, c) = (t.rows(), t.cols());
                let mut gx = Tensor::zeros(&[r, c]);
                for i in 0..r {
                    let row = gx.row_mut(i);
                    match axis {
                        Axis::Zero => row.copy_from_slice(g.data()),
                        Axis::One => row.iter_mut().for_each(|v| *v = g.data()[i]),
                    }
                }
                accumulate(grads, *x, gx);
            }
            Op::L2NormalizeRows(x) => {
                let t = self.value(*x);
                let cols = t.cols();
                let mut gx = g.clone();
                let (xd, yd) = (t.data(), y.data());
                par::for_each_row(gx.data_mut(), cols, |i, row| {
                    let xr = &xd[i * cols..(i + 1) * cols];
                    let yr = &yd[i * cols..(i + 1) * cols];
                    let n = xr.iter().map(|v| v * v).sum::<f64>().sqrt().max(NORM_FLOOR);
                    let dot: f64 = row.iter().zip(yr).map(|(g, y)| g * y).sum();
                    row.iter_mut().zip(yr).for_each(|(g, y)| *g = (*g - y * dot) / n);
                });
                accumulate(grads, *x, gx);
            }
            Op::GatherRows(x, idx) => {
                let t = self.value(*x);
                let mut gx = Tensor::zeros(&[t.rows(), t.cols()]);
                for (k, &i) in idx.iter().enumerate() {
                    for (o, &v) in gx.row_mut(i).iter_mut().zip(g.row(k)) {
                        *o += v;
                    }
                }
                accumulate(grads, *x, gx);
            }
            Op::ScatterAddRows(x, idx) => accumulate(grads, *x, g.select_rows(idx)),
            Op::Dropout(x, mask) => {
                let data = g.data().iter().zip(mask).map(|(g, m)| g * m).collect();
                accumulate(grads, *x, Tensor::new(g.shape().to_vec(), data).unwrap());
            }
            Op::Transpose(x) => accumulate(grads, *x, g.transpose()),
            Op::Reshape(x) => {
                let shape = self.nodes[x.0].value.shape().to_vec();
                accumulate(grads, *x, Tensor::new(shape, g.data().to_vec()).unwrap())
            }
            Op::ScaleRows(x, s) => {
                let ts = self.value(*s);
                if self.needs(*x) {
                    let mut gx = g.clone();
                    let sv = ts.data();
                    let cols = gx.cols();
                    par::for_each_row(gx.data_mut(), cols, |i, row| {
                        row.iter_mut().for_each(|v| *v *= sv[i]);
                    });
                    accumulate(grads, *x, gx);
                }
                if self.needs(*s) {
                    let tx = self.value(*x);
                    let gs = (0..tx.rows())
                        .map(|i| g.row(i).iter().zip(tx.row(i)).map(|(a, b)| a * b).sum())
                        .collect();
                    accumulate(grads, *s, Tensor::column(gs));
                }
            }
            Op::AddRow(x, b) => {
                if self.needs(*x) {
                    accumulate(grads, *x, g.clone());
                }
                if self.needs(*b) {
                    let c = g.cols();
                    let mut gb = vec![0.0; c];
                    for i in 0..g.rows() {
                        gb.iter_mut().zip(g.row(i)).for_each(|(a, v)| *a += v);
                    }
                    accumulate(grads, *b, Tensor::matrix(1, c, gb));
                }
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, delta: Tensor) {
    match &mut grads[v.0] {
        Some(g) => g
            .data_mut()
            .iter_mut()
            .zip(delta.data())
            .for_each(|(a, d)| *a += d),
        slot @ None => *slot = Some(delta),
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
