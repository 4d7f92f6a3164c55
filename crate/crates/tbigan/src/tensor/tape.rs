//! Dynamic reverse-mode tape.
//!
//! Each forward operation computes its value eagerly and records a node.
//! [`GradTape::backward`] walks the tape in reverse and emits the vector-
//! Jacobian products as further tape operations, so a gradient is an
//! ordinary tape value and can be differentiated again (second-order
//! gradients, used by the gradient penalty).

use super::{broadcast_shape, broadcast_strides, matmul_accum, Tensor};
use crate::error::{Error, Result};
use rand::Rng;

/// Index of a value on the tape.
pub type ValueId = usize;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Constant,
    MatMul(ValueId, ValueId),
    Transpose(ValueId),
    Add(ValueId, ValueId),
    Sub(ValueId, ValueId),
    Mul(ValueId, ValueId),
    Div(ValueId, ValueId),
    Neg(ValueId),
    Exp(ValueId),
    Ln(ValueId),
    Sqrt(ValueId),
    Recip(ValueId),
    Abs(ValueId),
    Sign,
    Scale(ValueId, f64),
    AddScalar(ValueId),
    Sigmoid(ValueId),
    Softplus(ValueId),
    Tanh(ValueId),
    SoftmaxLast(ValueId),
    SumAll(ValueId),
    MeanAll(ValueId),
    /// Sum over one axis of a matrix, keeping the axis with size 1.
    SumAxis(ValueId),
    MeanAxis(ValueId, usize),
    BroadcastTo(ValueId),
    SumToShape(ValueId),
    Reshape(ValueId),
    SliceRows(ValueId, usize, usize),
    SliceCols(ValueId, usize, usize),
    PadRows(ValueId, usize),
    PadCols(ValueId, usize),
    ConcatRows(Vec<ValueId>),
    ConcatCols(Vec<ValueId>),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    needs: bool,
}

/// Gradient ids produced by one backward pass, indexed by tape position.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<ValueId>>,
}

impl Gradients {
    /// Tape id of the gradient w.r.t. `id`, if any reached it.
    pub fn wrt(&self, id: ValueId) -> Option<ValueId> {
        self.grads.get(id).copied().flatten()
    }
}

/// Record of one forward pass. Rebuilt for every training/scoring step.
pub struct GradTape {
    nodes: Vec<Node>,
    check_finite: bool,
}

impl Default for GradTape {
    fn default() -> Self {
        Self::new()
    }
}

impl GradTape {
    pub fn new() -> Self {
        GradTape {
            nodes: Vec::new(),
            check_finite: cfg!(debug_assertions),
        }
    }

    /// Enable or disable the post-op finiteness check (on by default in
    /// debug builds). A non-finite op output then fails loudly instead of
    /// propagating NaN.
    pub fn set_check_finite(&mut self, on: bool) {
        self.check_finite = on;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drop every recorded node.
    pub fn reset(&mut self) {
        self.nodes.clear();
    }

    pub fn value(&self, id: ValueId) -> &Tensor {
        &self.nodes[id].value
    }

    /// Gradient tensor accumulated on a leaf after [`backward`](Self::backward).
    pub fn leaf_grad(&self, id: ValueId) -> Option<&[f64]> {
        self.nodes[id].value.grad()
    }

    fn needs(&self, id: ValueId) -> bool {
        self.nodes[id].needs
    }

    fn push(&mut self, op: Op, value: Tensor, needs: bool, name: &'static str) -> Result<ValueId> {
        if self.check_finite && !value.is_finite() {
            return Err(Error::non_finite(name));
        }
        self.nodes.push(Node { op, value, needs });
        Ok(self.nodes.len() - 1)
    }

    /// Insert a tensor as a leaf; it participates in backward iff
    /// `requires_grad` is set on it.
    pub fn leaf(&mut self, t: Tensor) -> ValueId {
        let needs = t.requires_grad();
        self.nodes.push(Node {
            op: Op::Leaf,
            value: t,
            needs,
        });
        self.nodes.len() - 1
    }

    /// Insert a tensor that never receives gradient.
    pub fn constant(&mut self, t: Tensor) -> ValueId {
        self.nodes.push(Node {
            op: Op::Constant,
            value: t,
            needs: false,
        });
        self.nodes.len() - 1
    }

    pub fn scalar(&mut self, v: f64) -> ValueId {
        self.constant(Tensor::scalar(v))
    }

    // ── forward ops ──────────────────────────────────────────────────

    pub fn matmul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (ta, tb) = (&self.nodes[a].value, &self.nodes[b].value);
        if ta.rank() != 2 || tb.rank() != 2 || ta.cols() != tb.rows() {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        let mut out = vec![0.0; m * n];
        matmul_accum(ta.data(), tb.data(), m, k, n, &mut out);
        let needs = self.needs(a) || self.needs(b);
        self.push(Op::MatMul(a, b), Tensor::new(vec![m, n], out)?, needs, "matmul")
    }

    pub fn transpose(&mut self, x: ValueId) -> Result<ValueId> {
        let t = &self.nodes[x].value;
        if t.rank() != 2 {
            return Err(Error::Contract(format!("transpose expects a matrix, got {:?}", t.shape())));
        }
        let (r, c) = (t.rows(), t.cols());
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = t.data()[i * c + j];
            }
        }
        let needs = self.needs(x);
        self.push(Op::Transpose(x), Tensor::new(vec![c, r], out)?, needs, "transpose")
    }

    fn binary(
        &mut self,
        a: ValueId,
        b: ValueId,
        op: fn(ValueId, ValueId) -> Op,
        f: fn(f64, f64) -> f64,
        name: &'static str,
    ) -> Result<ValueId> {
        let (ta, tb) = (&self.nodes[a].value, &self.nodes[b].value);
        let shape = broadcast_shape(ta.shape(), tb.shape())?;
        let numel: usize = shape.iter().product();
        let mut out = vec![0.0; numel];
        let (da, db) = (ta.data(), tb.data());
        // fast paths cover everything the networks actually emit: equal
        // shapes, scalars, row vectors against matrices and column
        // vectors against matrices
        if ta.shape() == tb.shape() {
            for ((o, &x), &y) in out.iter_mut().zip(da).zip(db) {
                *o = f(x, y);
            }
        } else if tb.numel() == 1 {
            let y = db[0];
            for (o, &x) in out.iter_mut().zip(da) {
                *o = f(x, y);
            }
        } else if ta.numel() == 1 {
            let x = da[0];
            for (o, &y) in out.iter_mut().zip(db) {
                *o = f(x, y);
            }
        } else if shape.len() == 2
            && ta.shape() == shape
            && (tb.rank() == 1 || tb.rows() == 1)
            && db.len() == shape[1]
        {
            // b broadcasts along rows ([n] or [1,n])
            let n = shape[1];
            for (orow, arow) in out.chunks_mut(n).zip(da.chunks(n)) {
                for ((o, &x), &y) in orow.iter_mut().zip(arow).zip(db) {
                    *o = f(x, y);
                }
            }
        } else if shape.len() == 2
            && tb.shape() == shape
            && (ta.rank() == 1 || ta.rows() == 1)
            && da.len() == shape[1]
        {
            let n = shape[1];
            for (orow, brow) in out.chunks_mut(n).zip(db.chunks(n)) {
                for ((o, &y), &x) in orow.iter_mut().zip(brow).zip(da) {
                    *o = f(x, y);
                }
            }
        } else if shape.len() == 2
            && ta.shape() == shape
            && tb.rank() == 2
            && tb.rows() == shape[0]
            && tb.cols() == 1
        {
            // b broadcasts along columns ([m,1])
            let n = shape[1];
            for (i, (orow, arow)) in out.chunks_mut(n).zip(da.chunks(n)).enumerate() {
                let y = db[i];
                for (o, &x) in orow.iter_mut().zip(arow) {
                    *o = f(x, y);
                }
            }
        } else if shape.len() == 2
            && tb.shape() == shape
            && ta.rank() == 2
            && ta.rows() == shape[0]
            && ta.cols() == 1
        {
            let n = shape[1];
            for (i, (orow, brow)) in out.chunks_mut(n).zip(db.chunks(n)).enumerate() {
                let x = da[i];
                for (o, &y) in orow.iter_mut().zip(brow) {
                    *o = f(x, y);
                }
            }
        } else {
            let sa = broadcast_strides(ta.shape(), &shape);
            let sb = broadcast_strides(tb.shape(), &shape);
            let rank = shape.len();
            let mut idx = vec![0usize; rank];
            for o in out.iter_mut() {
                let mut ia = 0;
                let mut ib = 0;
                for d in 0..rank {
                    ia += idx[d] * sa[d];
                    ib += idx[d] * sb[d];
                }
                *o = f(da[ia], db[ib]);
                for d in (0..rank).rev() {
                    idx[d] += 1;
                    if idx[d] < shape[d] {
                        break;
                    }
                    idx[d] = 0;
                }
            }
        }
        let needs = self.needs(a) || self.needs(b);
        self.push(op(a, b), Tensor::new(shape, out)?, needs, name)
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.binary(a, b, Op::Add, |x, y| x + y, "add")
    }

    pub fn sub(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.binary(a, b, Op::Sub, |x, y| x - y, "sub")
    }

    pub fn mul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.binary(a, b, Op::Mul, |x, y| x * y, "mul")
    }

    pub fn div(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.binary(a, b, Op::Div, |x, y| x / y, "div")
    }

    fn unary(
        &mut self,
        x: ValueId,
        op: impl FnOnce(ValueId) -> Op,
        f: impl Fn(f64) -> f64,
        name: &'static str,
        differentiable: bool,
    ) -> Result<ValueId> {
        let t = &self.nodes[x].value;
        let out: Vec<f64> = t.data().iter().map(|&v| f(v)).collect();
        let shape = t.shape().to_vec();
        let needs = differentiable && self.needs(x);
        self.push(op(x), Tensor::new(shape, out)?, needs, name)
    }

    pub fn neg(&mut self, x: ValueId) -> Result<ValueId> {
        self.unary(x, Op::Neg, |v| -v, "neg", true)
    }

    pub fn exp(&mut self, x: ValueId) -> Result<ValueId> {
        self.unary(x, Op::Exp, f64::exp, "exp", true)
    }

    pub fn ln(&mut self, x: ValueId) -> Result<ValueId> {
        self.unary(x, Op::Ln, f64::ln, "ln", true)
    }

    pub fn sqrt(&mut self, x: ValueId) -> Result<ValueId> {
        self.unary(x, Op::Sqrt, f64::sqrt, "sqrt", true)
    }

    pub fn recip(&mut self, x: ValueId) -> Result<ValueId> {
        self.unary(x, Op::Recip, |v| 1.0 / v, "recip", true)
    }

    pub fn abs(&mut self, x: ValueId) -> Result<ValueId> {
        self.unary(x, Op::Abs, f64::abs, "abs", true)
    }

    /// Elementwise sign; treated as piecewise constant (zero gradient).
    pub fn sign(&mut self, x: ValueId) -> Result<ValueId> {
        self.unary(x, |_| Op::Sign, |v| if v > 0.0 { 1.0 } else if v < 0.0 { -1.0 } else { 0.0 }, "sign", false)
    }

    pub fn scale(&mut self, x: ValueId, c: f64) -> Result<ValueId> {
        self.unary(x, |id| Op::Scale(id, c), |v| v * c, "scale", true)
    }

    pub fn add_scalar(&mut self, x: ValueId, c: f64) -> Result<ValueId> {
        self.unary(x, Op::AddScalar, |v| v + c, "add_scalar", true)
    }

    pub fn sigmoid(&mut self, x: ValueId) -> Result<ValueId> {
        self.unary(
            x,
            Op::Sigmoid,
            |v| {
                if v >= 0.0 {
                    1.0 / (1.0 + (-v).exp())
                } else {
                    let e = v.exp();
                    e / (1.0 + e)
                }
            },
            "sigmoid",
            true,
        )
    }

    /// Numerically stable ln(1 + e^x).
    pub fn softplus(&mut self, x: ValueId) -> Result<ValueId> {
        self.unary(
            x,
            Op::Softplus,
            |v| v.max(0.0) + (-v.abs()).exp().ln_1p(),
            "softplus",
            true,
        )
    }

    pub fn tanh(&mut self, x: ValueId) -> Result<ValueId> {
        self.unary(x, Op::Tanh, f64::tanh, "tanh", true)
    }

    /// Softmax over the last axis, stabilized by per-row max subtraction.
    pub fn softmax(&mut self, x: ValueId) -> Result<ValueId> {
        let t = &self.nodes[x].value;
        if t.rank() == 0 {
            return Err(Error::Contract("softmax on a scalar".into()));
        }
        let last = *t.shape().last().unwrap();
        let rows = t.numel() / last;
        let mut out = vec![0.0; t.numel()];
        for r in 0..rows {
            let row = &t.data()[r * last..(r + 1) * last];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let orow = &mut out[r * last..(r + 1) * last];
            let mut sum = 0.0;
            for (o, &v) in orow.iter_mut().zip(row) {
                *o = (v - m).exp();
                sum += *o;
            }
            for o in orow.iter_mut() {
                *o /= sum;
            }
        }
        let shape = t.shape().to_vec();
        let needs = self.needs(x);
        self.push(Op::SoftmaxLast(x), Tensor::new(shape, out)?, needs, "softmax")
    }

    /// Softmax over a chosen axis of a matrix.
    pub fn softmax_axis(&mut self, x: ValueId, axis: usize) -> Result<ValueId> {
        let rank = self.nodes[x].value.rank();
        if axis >= rank {
            return Err(Error::Contract(format!("softmax axis {axis} out of range for rank {rank}")));
        }
        if axis + 1 == rank {
            self.softmax(x)
        } else {
            let xt = self.transpose(x)?;
            let s = self.softmax(xt)?;
            self.transpose(s)
        }
    }

    pub fn sum_all(&mut self, x: ValueId) -> Result<ValueId> {
        let s: f64 = self.nodes[x].value.data().iter().sum();
        let needs = self.needs(x);
        self.push(Op::SumAll(x), Tensor::scalar(s), needs, "sum_all")
    }

    pub fn mean_all(&mut self, x: ValueId) -> Result<ValueId> {
        let t = &self.nodes[x].value;
        let s: f64 = t.data().iter().sum::<f64>() / t.numel() as f64;
        let needs = self.needs(x);
        self.push(Op::MeanAll(x), Tensor::scalar(s), needs, "mean_all")
    }

    fn axis_reduce(&mut self, x: ValueId, axis: usize, mean: bool) -> Result<ValueId> {
        let t = &self.nodes[x].value;
        if t.rank() != 2 || axis > 1 {
            return Err(Error::Contract(format!(
                "axis reduction expects a matrix and axis 0|1, got {:?} axis {axis}",
                t.shape()
            )));
        }
        let (r, c) = (t.rows(), t.cols());
        let (shape, mut out) = if axis == 0 {
            (vec![1, c], vec![0.0; c])
        } else {
            (vec![r, 1], vec![0.0; r])
        };
        for i in 0..r {
            for j in 0..c {
                let v = t.data()[i * c + j];
                if axis == 0 {
                    out[j] += v;
                } else {
                    out[i] += v;
                }
            }
        }
        let denom = if axis == 0 { r } else { c } as f64;
        if mean {
            for o in out.iter_mut() {
                *o /= denom;
            }
        }
        let needs = self.needs(x);
        let op = if mean { Op::MeanAxis(x, axis) } else { Op::SumAxis(x) };
        let name = if mean { "mean_axis" } else { "sum_axis" };
        self.push(op, Tensor::new(shape, out)?, needs, name)
    }

    /// Sum over `axis` of a matrix, keeping a size-1 axis.
    pub fn sum_axis(&mut self, x: ValueId, axis: usize) -> Result<ValueId> {
        self.axis_reduce(x, axis, false)
    }

    /// Mean over `axis` of a matrix, keeping a size-1 axis.
    pub fn mean_axis(&mut self, x: ValueId, axis: usize) -> Result<ValueId> {
        self.axis_reduce(x, axis, true)
    }

    pub fn broadcast_to(&mut self, x: ValueId, shape: &[usize]) -> Result<ValueId> {
        let t = &self.nodes[x].value;
        let merged = broadcast_shape(t.shape(), shape)?;
        if merged != shape {
            return Err(Error::ShapeMismatch {
                op: "broadcast_to",
                lhs: t.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let numel: usize = shape.iter().product();
        let mut out = vec![0.0; numel];
        let data = t.data();
        if data.len() == 1 {
            out.fill(data[0]);
        } else if shape.len() == 2 && (t.rank() == 1 || t.rows() == 1) && data.len() == shape[1] {
            for orow in out.chunks_mut(shape[1]) {
                orow.copy_from_slice(data);
            }
        } else if shape.len() == 2 && t.rank() == 2 && t.cols() == 1 && t.rows() == shape[0] {
            for (orow, &v) in out.chunks_mut(shape[1]).zip(data) {
                orow.fill(v);
            }
        } else {
            let strides = broadcast_strides(t.shape(), shape);
            let rank = shape.len();
            let mut idx = vec![0usize; rank];
            for o in out.iter_mut() {
                let mut ix = 0;
                for d in 0..rank {
                    ix += idx[d] * strides[d];
                }
                *o = data[ix];
                for d in (0..rank).rev() {
                    idx[d] += 1;
                    if idx[d] < shape[d] {
                        break;
                    }
                    idx[d] = 0;
                }
            }
        }
        let needs = self.needs(x);
        self.push(Op::BroadcastTo(x), Tensor::new(shape.to_vec(), out)?, needs, "broadcast_to")
    }

    /// Reduce by summation down to a broadcast-compatible smaller shape
    /// (the adjoint of `broadcast_to`).
    pub fn sum_to_shape(&mut self, x: ValueId, shape: &[usize]) -> Result<ValueId> {
        let t = &self.nodes[x].value;
        let merged = broadcast_shape(t.shape(), shape)?;
        if merged != t.shape() {
            return Err(Error::ShapeMismatch {
                op: "sum_to_shape",
                lhs: t.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let numel: usize = shape.iter().product();
        let mut out = vec![0.0; numel];
        let data = t.data();
        let row_target = shape.len() == 1 || (shape.len() == 2 && shape[0] == 1);
        if numel == 1 {
            out[0] = data.iter().sum();
        } else if t.rank() == 2 && row_target && numel == t.cols() {
            // column sums down to [n] or [1,n]
            let n = t.cols();
            for row in data.chunks(n) {
                for (o, &v) in out.iter_mut().zip(row) {
                    *o += v;
                }
            }
        } else if t.rank() == 2 && shape.len() == 2 && shape[0] == t.rows() && shape[1] == 1 {
            for (o, row) in out.iter_mut().zip(data.chunks(t.cols())) {
                *o = row.iter().sum();
            }
        } else {
            let strides = broadcast_strides(shape, t.shape());
            let rank = t.rank();
            let full = t.shape().to_vec();
            let mut idx = vec![0usize; rank];
            for &v in data {
                let mut ix = 0;
                for d in 0..rank {
                    ix += idx[d] * strides[d];
                }
                out[ix] += v;
                for d in (0..rank).rev() {
                    idx[d] += 1;
                    if idx[d] < full[d] {
                        break;
                    }
                    idx[d] = 0;
                }
            }
        }
        let needs = self.needs(x);
        self.push(Op::SumToShape(x), Tensor::new(shape.to_vec(), out)?, needs, "sum_to_shape")
    }

    pub fn reshape(&mut self, x: ValueId, shape: &[usize]) -> Result<ValueId> {
        let t = &self.nodes[x].value;
        let numel: usize = shape.iter().product();
        if numel != t.numel() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: t.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let data = t.data().to_vec();
        let needs = self.needs(x);
        self.push(Op::Reshape(x), Tensor::new(shape.to_vec(), data)?, needs, "reshape")
    }

    pub fn slice_rows(&mut self, x: ValueId, start: usize, end: usize) -> Result<ValueId> {
        let t = &self.nodes[x].value;
        if t.rank() != 2 || end > t.rows() || start >= end {
            return Err(Error::Contract(format!(
                "slice_rows [{start},{end}) out of range for {:?}",
                t.shape()
            )));
        }
        let c = t.cols();
        let data = t.data()[start * c..end * c].to_vec();
        let needs = self.needs(x);
        self.push(Op::SliceRows(x, start, end), Tensor::new(vec![end - start, c], data)?, needs, "slice_rows")
    }

    pub fn slice_cols(&mut self, x: ValueId, start: usize, end: usize) -> Result<ValueId> {
        let t = &self.nodes[x].value;
        if t.rank() != 2 || end > t.cols() || start >= end {
            return Err(Error::Contract(format!(
                "slice_cols [{start},{end}) out of range for {:?}",
                t.shape()
            )));
        }
        let (r, c) = (t.rows(), t.cols());
        let w = end - start;
        let mut data = vec![0.0; r * w];
        for i in 0..r {
            data[i * w..(i + 1) * w].copy_from_slice(&t.data()[i * c + start..i * c + end]);
        }
        let needs = self.needs(x);
        self.push(Op::SliceCols(x, start, end), Tensor::new(vec![r, w], data)?, needs, "slice_cols")
    }

    /// Zero-pad a matrix with `before`/`after` rows.
    pub fn pad_rows(&mut self, x: ValueId, before: usize, after: usize) -> Result<ValueId> {
        let t = &self.nodes[x].value;
        if t.rank() != 2 {
            return Err(Error::Contract("pad_rows expects a matrix".into()));
        }
        let (r, c) = (t.rows(), t.cols());
        let mut data = vec![0.0; (before + r + after) * c];
        data[before * c..(before + r) * c].copy_from_slice(t.data());
        let needs = self.needs(x);
        self.push(Op::PadRows(x, before), Tensor::new(vec![before + r + after, c], data)?, needs, "pad_rows")
    }

    pub fn pad_cols(&mut self, x: ValueId, before: usize, after: usize) -> Result<ValueId> {
        let t = &self.nodes[x].value;
        if t.rank() != 2 {
            return Err(Error::Contract("pad_cols expects a matrix".into()));
        }
        let (r, c) = (t.rows(), t.cols());
        let w = before + c + after;
        let mut data = vec![0.0; r * w];
        for i in 0..r {
            data[i * w + before..i * w + before + c].copy_from_slice(&t.data()[i * c..(i + 1) * c]);
        }
        let needs = self.needs(x);
        self.push(Op::PadCols(x, before), Tensor::new(vec![r, w], data)?, needs, "pad_cols")
    }

    pub fn concat_rows(&mut self, items: &[ValueId]) -> Result<ValueId> {
        if items.is_empty() {
            return Err(Error::Contract("concat_rows of nothing".into()));
        }
        let c = self.nodes[items[0]].value.cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &id in items {
            let t = &self.nodes[id].value;
            if t.rank() != 2 || t.cols() != c {
                return Err(Error::ShapeMismatch {
                    op: "concat_rows",
                    lhs: self.nodes[items[0]].value.shape().to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let needs = items.iter().any(|&id| self.needs(id));
        self.push(Op::ConcatRows(items.to_vec()), Tensor::new(vec![rows, c], data)?, needs, "concat_rows")
    }

    pub fn concat_cols(&mut self, items: &[ValueId]) -> Result<ValueId> {
        if items.is_empty() {
            return Err(Error::Contract("concat_cols of nothing".into()));
        }
        let r = self.nodes[items[0]].value.rows();
        let mut width = 0;
        for &id in items {
            let t = &self.nodes[id].value;
            if t.rank() != 2 || t.rows() != r {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols",
                    lhs: self.nodes[items[0]].value.shape().to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
            width += t.cols();
        }
        let mut data = vec![0.0; r * width];
        let mut off = 0;
        for &id in items {
            let t = &self.nodes[id].value;
            let c = t.cols();
            for i in 0..r {
                data[i * width + off..i * width + off + c]
                    .copy_from_slice(&t.data()[i * c..(i + 1) * c]);
            }
            off += c;
        }
        let needs = items.iter().any(|&id| self.needs(id));
        self.push(Op::ConcatCols(items.to_vec()), Tensor::new(vec![r, width], data)?, needs, "concat_cols")
    }

    // ── composed helpers ─────────────────────────────────────────────

    /// x² as x⊙x.
    pub fn square(&mut self, x: ValueId) -> Result<ValueId> {
        self.mul(x, x)
    }

    /// Σ x² as a scalar.
    pub fn sum_squares(&mut self, x: ValueId) -> Result<ValueId> {
        let sq = self.square(x)?;
        self.sum_all(sq)
    }

    /// Gaussian error linear unit (tanh approximation); smooth, so
    /// finite-difference checks stay tight.
    pub fn gelu(&mut self, x: ValueId) -> Result<ValueId> {
        const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
        let x3 = {
            let x2 = self.mul(x, x)?;
            self.mul(x2, x)?
        };
        let x3s = self.scale(x3, 0.044_715)?;
        let inner = self.add(x, x3s)?;
        let inner = self.scale(inner, SQRT_2_OVER_PI)?;
        let t = self.tanh(inner)?;
        let gate = self.add_scalar(t, 1.0)?;
        let xh = self.scale(x, 0.5)?;
        self.mul(xh, gate)
    }

    /// Layer normalization over the last axis with learnable gain and bias.
    ///
    /// Composed from primitives, so the backward pass is exact by
    /// construction. `gain`/`bias` must match the last dimension.
    pub fn layer_norm(&mut self, x: ValueId, gain: ValueId, bias: ValueId, eps: f64) -> Result<ValueId> {
        if eps <= 0.0 {
            return Err(Error::Config(format!("layer_norm eps must be > 0, got {eps}")));
        }
        let t = &self.nodes[x].value;
        let last = *t.shape().last().ok_or_else(|| Error::Contract("layer_norm on a scalar".into()))?;
        for (name, id) in [("gain", gain), ("bias", bias)] {
            let p = &self.nodes[id].value;
            if p.numel() != last {
                return Err(Error::ShapeMismatch {
                    op: if name == "gain" { "layer_norm gain" } else { "layer_norm bias" },
                    lhs: t.shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
        }
        // normalize over the last axis; for rank 1 treat as a single row
        let (xm, restore) = if self.nodes[x].value.rank() == 1 {
            (self.reshape(x, &[1, last])?, true)
        } else {
            (x, false)
        };
        let mean = self.mean_axis(xm, 1)?;
        let centered = self.sub(xm, mean)?;
        let var = {
            let sq = self.square(centered)?;
            self.mean_axis(sq, 1)?
        };
        let std = {
            let v = self.add_scalar(var, eps)?;
            self.sqrt(v)?
        };
        let normed = self.div(centered, std)?;
        let scaled = self.mul(normed, gain)?;
        let out = self.add(scaled, bias)?;
        if restore {
            self.reshape(out, &[last])
        } else {
            Ok(out)
        }
    }

    /// Inverted dropout: keep with probability 1−p and rescale, so eval
    /// mode is the identity. The mask is recorded as a constant.
    pub fn dropout<R: Rng>(&mut self, x: ValueId, p: f64, rng: &mut R) -> Result<ValueId> {
        if p <= 0.0 {
            return Ok(x);
        }
        if p >= 1.0 {
            return Err(Error::Config(format!("dropout rate must be < 1, got {p}")));
        }
        let shape = self.nodes[x].value.shape().to_vec();
        let keep = 1.0 - p;
        let numel: usize = shape.iter().product();
        let mask: Vec<f64> = (0..numel)
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let m = self.constant(Tensor::new(shape, mask)?);
        self.mul(x, m)
    }

    /// Mean absolute error between two same-shape tensors.
    pub fn mae(&mut self, x: ValueId, y: ValueId) -> Result<ValueId> {
        let ta = self.nodes[x].value.shape();
        let tb = self.nodes[y].value.shape();
        if ta != tb {
            return Err(Error::ShapeMismatch {
                op: "mae",
                lhs: ta.to_vec(),
                rhs: tb.to_vec(),
            });
        }
        let d = self.sub(x, y)?;
        let a = self.abs(d)?;
        self.mean_all(a)
    }

    /// Binary cross-entropy of a logit against a constant target, via
    /// softplus: t·softplus(−l) + (1−t)·softplus(l). Stable for any logit.
    pub fn bce_with_logit(&mut self, logit: ValueId, target: f64) -> Result<ValueId> {
        let neg_l = self.neg(logit)?;
        let sp_neg = self.softplus(neg_l)?;
        let sp_pos = self.softplus(logit)?;
        let a = self.scale(sp_neg, target)?;
        let b = self.scale(sp_pos, 1.0 - target)?;
        let s = self.add(a, b)?;
        self.mean_all(s)
    }

    // ── backward ─────────────────────────────────────────────────────

    /// Emit gradient nodes for everything reachable from `loss` and
    /// accumulate gradients onto `requires_grad` leaves. `loss` must be a
    /// scalar (one element).
    pub fn backward(&mut self, loss: ValueId) -> Result<Gradients> {
        let grads = self.grad_nodes(loss)?;
        for id in 0..grads.grads.len() {
            if let Some(gid) = grads.grads[id] {
                if matches!(self.nodes[id].op, Op::Leaf) && self.nodes[id].value.requires_grad() {
                    let gv = self.nodes[gid].value.data().to_vec();
                    self.nodes[id].value.accumulate_grad(&gv);
                }
            }
        }
        Ok(grads)
    }

    /// Emit the gradient computation as tape ops without touching leaf
    /// `grad` fields. The returned map yields differentiable gradient ids,
    /// which is what makes second-order terms possible.
    pub fn grad_nodes(&mut self, loss: ValueId) -> Result<Gradients> {
        if self.nodes[loss].value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.nodes[loss].value.shape()
            )));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<ValueId>> = vec![None; n];
        if self.nodes[loss].needs {
            let shape = self.nodes[loss].value.shape().to_vec();
            let seed = self.constant(Tensor::new(shape, vec![1.0])?);
            grads[loss] = Some(seed);
            for id in (0..n).rev() {
                let Some(gid) = grads[id] else { continue };
                self.emit_vjp(id, gid, &mut grads)?;
            }
        }
        Ok(Gradients { grads })
    }

    fn accum(&mut self, grads: &mut [Option<ValueId>], input: ValueId, contrib: ValueId) -> Result<()> {
        if !self.needs(input) {
            return Ok(());
        }
        grads[input] = Some(match grads[input] {
            None => contrib,
            Some(prev) => self.add(prev, contrib)?,
        });
        Ok(())
    }

    fn emit_vjp(&mut self, id: ValueId, g: ValueId, grads: &mut [Option<ValueId>]) -> Result<()> {
        let op = self.nodes[id].op.clone();
        match op {
            Op::Leaf | Op::Constant => {}
            Op::MatMul(a, b) => {
                if self.needs(a) {
                    let bt = self.transpose(b)?;
                    let da = self.matmul(g, bt)?;
                    self.accum(grads, a, da)?;
                }
                if self.needs(b) {
                    let at = self.transpose(a)?;
                    let db = self.matmul(at, g)?;
                    self.accum(grads, b, db)?;
                }
            }
            Op::Transpose(x) => {
                let dx = self.transpose(g)?;
                self.accum(grads, x, dx)?;
            }
            Op::Add(a, b) => {
                for side in [a, b] {
                    if self.needs(side) {
                        let shape = self.nodes[side].value.shape().to_vec();
                        let d = self.sum_to_shape(g, &shape)?;
                        self.accum(grads, side, d)?;
                    }
                }
            }
            Op::Sub(a, b) => {
                if self.needs(a) {
                    let shape = self.nodes[a].value.shape().to_vec();
                    let d = self.sum_to_shape(g, &shape)?;
                    self.accum(grads, a, d)?;
                }
                if self.needs(b) {
                    let shape = self.nodes[b].value.shape().to_vec();
                    let ng = self.neg(g)?;
                    let d = self.sum_to_shape(ng, &shape)?;
                    self.accum(grads, b, d)?;
                }
            }
            Op::Mul(a, b) => {
                if self.needs(a) {
                    let gb = self.mul(g, b)?;
                    let shape = self.nodes[a].value.shape().to_vec();
                    let d = self.sum_to_shape(gb, &shape)?;
                    self.accum(grads, a, d)?;
                }
                if self.needs(b) {
                    let ga = self.mul(g, a)?;
                    let shape = self.nodes[b].value.shape().to_vec();
                    let d = self.sum_to_shape(ga, &shape)?;
                    self.accum(grads, b, d)?;
                }
            }
            Op::Div(a, b) => {
                if self.needs(a) {
                    let gb = self.div(g, b)?;
                    let shape = self.nodes[a].value.shape().to_vec();
                    let d = self.sum_to_shape(gb, &shape)?;
                    self.accum(grads, a, d)?;
                }
                if self.needs(b) {
                    let ob = self.div(id, b)?; // out/b = a/b²
                    let gob = self.mul(g, ob)?;
                    let ng = self.neg(gob)?;
                    let shape = self.nodes[b].value.shape().to_vec();
                    let d = self.sum_to_shape(ng, &shape)?;
                    self.accum(grads, b, d)?;
                }
            }
            Op::Neg(x) => {
                let d = self.neg(g)?;
                self.accum(grads, x, d)?;
            }
            Op::Exp(x) => {
                let d = self.mul(g, id)?;
                self.accum(grads, x, d)?;
            }
            Op::Ln(x) => {
                let d = self.div(g, x)?;
                self.accum(grads, x, d)?;
            }
            Op::Sqrt(x) => {
                let r = self.recip(id)?;
                let half = self.scale(r, 0.5)?;
                let d = self.mul(g, half)?;
                self.accum(grads, x, d)?;
            }
            Op::Recip(x) => {
                let yy = self.mul(id, id)?;
                let gyy = self.mul(g, yy)?;
                let d = self.neg(gyy)?;
                self.accum(grads, x, d)?;
            }
            Op::Abs(x) => {
                let s = self.sign(x)?;
                let d = self.mul(g, s)?;
                self.accum(grads, x, d)?;
            }
            Op::Sign => {}
            Op::Scale(x, c) => {
                let d = self.scale(g, c)?;
                self.accum(grads, x, d)?;
            }
            Op::AddScalar(x) => {
                self.accum(grads, x, g)?;
            }
            Op::Sigmoid(x) => {
                let one_minus = {
                    let n = self.neg(id)?;
                    self.add_scalar(n, 1.0)?
                };
                let yy = self.mul(id, one_minus)?;
                let d = self.mul(g, yy)?;
                self.accum(grads, x, d)?;
            }
            Op::Softplus(x) => {
                let s = self.sigmoid(x)?;
                let d = self.mul(g, s)?;
                self.accum(grads, x, d)?;
            }
            Op::Tanh(x) => {
                let yy = self.mul(id, id)?;
                let one_minus = {
                    let n = self.neg(yy)?;
                    self.add_scalar(n, 1.0)?
                };
                let d = self.mul(g, one_minus)?;
                self.accum(grads, x, d)?;
            }
            Op::SoftmaxLast(x) => {
                // dx = y ⊙ (g − Σ_last(g⊙y))
                let rank = self.nodes[id].value.rank();
                let gy = self.mul(g, id)?;
                let s = if rank == 2 {
                    self.sum_axis(gy, 1)?
                } else {
                    let last = self.nodes[id].value.numel();
                    let m = self.reshape(gy, &[1, last])?;
                    let s = self.sum_axis(m, 1)?;
                    self.reshape(s, &[1])?
                };
                let centered = self.sub(g, s)?;
                let d = self.mul(id, centered)?;
                self.accum(grads, x, d)?;
            }
            Op::SumAll(x) => {
                let shape = self.nodes[x].value.shape().to_vec();
                let d = self.broadcast_to(g, &shape)?;
                self.accum(grads, x, d)?;
            }
            Op::MeanAll(x) => {
                let shape = self.nodes[x].value.shape().to_vec();
                let numel: usize = shape.iter().product();
                let b = self.broadcast_to(g, &shape)?;
                let d = self.scale(b, 1.0 / numel as f64)?;
                self.accum(grads, x, d)?;
            }
            Op::SumAxis(x) => {
                let shape = self.nodes[x].value.shape().to_vec();
                let d = self.broadcast_to(g, &shape)?;
                self.accum(grads, x, d)?;
            }
            Op::MeanAxis(x, axis) => {
                let shape = self.nodes[x].value.shape().to_vec();
                let n = shape[axis] as f64;
                let b = self.broadcast_to(g, &shape)?;
                let d = self.scale(b, 1.0 / n)?;
                self.accum(grads, x, d)?;
            }
            Op::BroadcastTo(x) => {
                let shape = self.nodes[x].value.shape().to_vec();
                let d = self.sum_to_shape(g, &shape)?;
                self.accum(grads, x, d)?;
            }
            Op::SumToShape(x) => {
                let shape = self.nodes[x].value.shape().to_vec();
                let d = self.broadcast_to(g, &shape)?;
                self.accum(grads, x, d)?;
            }
            Op::Reshape(x) => {
                let shape = self.nodes[x].value.shape().to_vec();
                let d = self.reshape(g, &shape)?;
                self.accum(grads, x, d)?;
            }
            Op::SliceRows(x, start, end) => {
                let total = self.nodes[x].value.rows();
                let d = self.pad_rows(g, start, total - end)?;
                self.accum(grads, x, d)?;
            }
            Op::SliceCols(x, start, end) => {
                let total = self.nodes[x].value.cols();
                let d = self.pad_cols(g, start, total - end)?;
                self.accum(grads, x, d)?;
            }
            Op::PadRows(x, before) => {
                let rows = self.nodes[x].value.rows();
                let d = self.slice_rows(g, before, before + rows)?;
                self.accum(grads, x, d)?;
            }
            Op::PadCols(x, before) => {
                let cols = self.nodes[x].value.cols();
                let d = self.slice_cols(g, before, before + cols)?;
                self.accum(grads, x, d)?;
            }
            Op::ConcatRows(items) => {
                let mut off = 0;
                for item in items {
                    let rows = self.nodes[item].value.rows();
                    if self.needs(item) {
                        let d = self.slice_rows(g, off, off + rows)?;
                        self.accum(grads, item, d)?;
                    }
                    off += rows;
                }
            }
            Op::ConcatCols(items) => {
                let mut off = 0;
                for item in items {
                    let cols = self.nodes[item].value.cols();
                    if self.needs(item) {
                        let d = self.slice_cols(g, off, off + cols)?;
                        self.accum(grads, item, d)?;
                    }
                    off += cols;
                }
            }
        }
        Ok(())
    }
}

/// Leaf ids of a parameter set bound onto a tape for one pass.
#[derive(Debug, Clone)]
pub struct Bound {
    pub ids: Vec<ValueId>,
}
