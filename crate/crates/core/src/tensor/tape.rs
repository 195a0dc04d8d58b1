//! Reverse-mode differentiation over a flat operation tape.
//!
//! A [`Tape`] is rebuilt for every mini-batch. Each operation appends one
//! node holding its forward value and the inputs needed by its backward
//! rule; [`Tape::backward`] walks the nodes once in reverse order.

use std::ops::Range;

use super::{Tensor, TensorError};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    SegmentMean(Var, Vec<Vec<usize>>),
    MeanRows(Var),
    SumAll(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Cos(Var),
    Softmax(Var),
    Euclidean(Var, Var),
    BceWithLogits(Var, Vec<f64>),
    Transpose(Var),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        segments: Vec<Range<usize>>,
        weights: Vec<Vec<f64>>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::ConcatCols(..) => "concat_cols",
            Op::ConcatRows(..) => "concat_rows",
            Op::SliceCols(..) => "slice_cols",
            Op::GatherRows(..) => "gather_rows",
            Op::SegmentMean(..) => "segment_mean",
            Op::MeanRows(..) => "mean_rows",
            Op::SumAll(..) => "sum",
            Op::Sigmoid(..) => "sigmoid",
            Op::Tanh(..) => "tanh",
            Op::Relu(..) => "relu",
            Op::Cos(..) => "cos",
            Op::Softmax(..) => "softmax",
            Op::Euclidean(..) => "euclidean_distance",
            Op::BceWithLogits(..) => "bce_with_logits",
            Op::Transpose(..) => "transpose",
            Op::Attention { .. } => "scaled_dot_attention",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`, if any flowed into it.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn shape_err(op: &'static str, lhs: [usize; 2], rhs: [usize; 2]) -> TensorError {
    TensorError::ShapeMismatch { op, lhs, rhs }
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

    /// A differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// A non-differentiable input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> [usize; 2] {
        self.nodes[var.0].value.shape()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var, TensorError> {
        if !value.is_finite() {
            let shapes: Vec<[usize; 2]> = inputs.iter().map(|v| self.shape(*v)).collect();
            return Err(TensorError::NonFinite {
                op: op.name(),
                trace: format!("inputs {shapes:?} -> output {:?}", value.shape()),
            });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err(op, sa, sb));
        }
        Ok(())
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var, TensorError> {
        let value = self.value(a).map(f);
        self.push(value, op, &[a])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa[1] != sb[0] {
            return Err(shape_err("matmul", sa, sb));
        }
        let value = self.value(a).matmul(self.value(b));
        self.push(value, Op::MatMul(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("add", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(value, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("sub", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(value, Op::Sub(a, b), &[a, b])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("mul", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(value, Op::Mul(a, b), &[a, b])
    }

    /// Adds a `1 x c` row to every row of an `n x c` matrix (bias add).
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, TensorError> {
        let (sa, sr) = (self.shape(a), self.shape(row));
        if sr[0] != 1 || sr[1] != sa[1] {
            return Err(shape_err("add_row", sa, sr));
        }
        let r = self.value(row).data().to_vec();
        let mut value = self.value(a).clone();
        for i in 0..sa[0] {
            for (x, b) in value.row_slice_mut(i).iter_mut().zip(&r) {
                *x += b;
            }
        }
        self.push(value, Op::AddRow(a, row), &[a, row])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var, TensorError> {
        self.unary(a, Op::Scale(a, c), |x| c * x)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var, TensorError> {
        self.unary(a, Op::AddScalar(a), |x| x + c)
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let rows = parts.first().map_or(0, |p| self.shape(*p)[0]);
        let mut cols = 0;
        for p in parts {
            let s = self.shape(*p);
            if s[0] != rows {
                return Err(shape_err("concat_cols", [rows, cols], s));
            }
            cols += s[1];
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.value(*p).row_slice(r));
            }
        }
        let value = Tensor::new(rows, cols, data)?;
        self.push(value, Op::ConcatCols(parts.to_vec()), parts)
    }

    /// Vertical concatenation of matrices with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let cols = parts.first().map_or(0, |p| self.shape(*p)[1]);
        let mut rows = 0;
        for p in parts {
            let s = self.shape(*p);
            if s[1] != cols {
                return Err(shape_err("concat_rows", [rows, cols], s));
            }
            rows += s[0];
        }
        let mut data = Vec::with_capacity(rows * cols);
        for p in parts {
            data.extend_from_slice(self.value(*p).data());
        }
        let value = Tensor::new(rows, cols, data)?;
        self.push(value, Op::ConcatRows(parts.to_vec()), parts)
    }

    /// Columns `range` of `a`.
    pub fn slice_cols(&mut self, a: Var, range: Range<usize>) -> Result<Var, TensorError> {
        let s = self.shape(a);
        if range.start > range.end || range.end > s[1] {
            return Err(shape_err("slice_cols", s, [range.start, range.end]));
        }
        let src = self.value(a);
        let mut data = Vec::with_capacity(s[0] * range.len());
        for r in 0..s[0] {
            data.extend_from_slice(&src.row_slice(r)[range.clone()]);
        }
        let value = Tensor::new(s[0], range.len(), data)?;
        self.push(value, Op::SliceCols(a, range.start), &[a])
    }

    /// Rows of `a` selected (with repetition) by `index`.
    pub fn gather_rows(&mut self, a: Var, index: &[usize]) -> Result<Var, TensorError> {
        let s = self.shape(a);
        let src = self.value(a);
        let mut data = Vec::with_capacity(index.len() * s[1]);
        for &i in index {
            if i >= s[0] {
                return Err(TensorError::IndexOutOfBounds {
                    op: "gather_rows",
                    index: i,
                    len: s[0],
                });
            }
            data.extend_from_slice(src.row_slice(i));
        }
        let value = Tensor::new(index.len(), s[1], data)?;
        self.push(value, Op::GatherRows(a, index.to_vec()), &[a])
    }

    /// Row `g` of the output is the mean of the rows of `a` listed in `groups[g]`.
    pub fn segment_mean(&mut self, a: Var, groups: &[Vec<usize>]) -> Result<Var, TensorError> {
        let s = self.shape(a);
        let src = self.value(a);
        let mut value = Tensor::zeros(groups.len(), s[1]);
        for (g, members) in groups.iter().enumerate() {
            if members.is_empty() {
                return Err(TensorError::EmptyGroup { op: "segment_mean" });
            }
            let w = 1.0 / members.len() as f64;
            for &m in members {
                if m >= s[0] {
                    return Err(TensorError::IndexOutOfBounds {
                        op: "segment_mean",
                        index: m,
                        len: s[0],
                    });
                }
                for (o, x) in value.row_slice_mut(g).iter_mut().zip(src.row_slice(m)) {
                    *o += w * x;
                }
            }
        }
        self.push(value, Op::SegmentMean(a, groups.to_vec()), &[a])
    }

    /// Mean over rows: `n x c -> 1 x c`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var, TensorError> {
        let s = self.shape(a);
        if s[0] == 0 {
            return Err(TensorError::EmptyGroup { op: "mean_rows" });
        }
        let src = self.value(a);
        let mut out = vec![0.0; s[1]];
        for r in 0..s[0] {
            for (o, x) in out.iter_mut().zip(src.row_slice(r)) {
                *o += x;
            }
        }
        let n = s[0] as f64;
        out.iter_mut().for_each(|o| *o /= n);
        self.push(Tensor::row(out), Op::MeanRows(a), &[a])
    }

    /// Sum of every element, as a `1 x 1` tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var, TensorError> {
        let total = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(total), Op::SumAll(a), &[a])
    }

    /// Mean of every element, as a `1 x 1` tensor.
    pub fn mean(&mut self, a: Var) -> Result<Var, TensorError> {
        let n = self.value(a).len();
        if n == 0 {
            return Err(TensorError::EmptyGroup { op: "mean" });
        }
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n as f64)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    /// `max(x, 0)`; the subgradient at 0 is 0.
    pub fn relu(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn cos(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary(a, Op::Cos(a), f64::cos)
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Result<Var, TensorError> {
        let mut value = self.value(a).clone();
        for r in 0..value.rows() {
            softmax_in_place(value.row_slice_mut(r));
        }
        self.push(value, Op::Softmax(a), &[a])
    }

    /// Row-wise Euclidean distance: `n x c, n x c -> n x 1`.
    ///
    /// The gradient at zero distance is taken as 0.
    pub fn euclidean_distance(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("euclidean_distance", a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let d: Vec<f64> = (0..va.rows())
            .map(|r| {
                va.row_slice(r)
                    .iter()
                    .zip(vb.row_slice(r))
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect();
        self.push(Tensor::column(d), Op::Euclidean(a, b), &[a, b])
    }

    /// Elementwise binary cross-entropy on logits against fixed 0/1 targets,
    /// in the overflow-free form `max(x,0) - x*y + ln(1 + e^-|x|)`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64]) -> Result<Var, TensorError> {
        let s = self.shape(logits);
        if s[0] * s[1] != targets.len() {
            return Err(shape_err("bce_with_logits", s, [targets.len(), 1]));
        }
        let src = self.value(logits);
        let data: Vec<f64> = src
            .data()
            .iter()
            .zip(targets)
            .map(|(&x, &y)| x.max(0.0) - x * y + (-x.abs()).exp().ln_1p())
            .collect();
        let value = Tensor::new(s[0], s[1], data)?;
        self.push(value, Op::BceWithLogits(logits, targets.to_vec()), &[logits])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, TensorError> {
        let value = self.value(a).transpose();
        self.push(value, Op::Transpose(a), &[a])
    }

    /// Segmented single-head scaled dot-product attention.
    ///
    /// Query row `i` attends over rows `segments[i]` of `keys`/`values`.
    /// An empty segment yields a zero output row. Returns the output
    /// (`queries.rows x values.cols`) and the attention weights per query.
    pub fn scaled_dot_attention(
        &mut self,
        queries: Var,
        keys: Var,
        values: Var,
        segments: &[Range<usize>],
    ) -> Result<(Var, Vec<Vec<f64>>), TensorError> {
        let (sq, sk, sv) = (self.shape(queries), self.shape(keys), self.shape(values));
        if sq[1] != sk[1] {
            return Err(shape_err("scaled_dot_attention", sq, sk));
        }
        if sk[0] != sv[0] {
            return Err(shape_err("scaled_dot_attention", sk, sv));
        }
        if segments.len() != sq[0] {
            return Err(shape_err("scaled_dot_attention", sq, [segments.len(), 0]));
        }
        let scale = 1.0 / (sq[1] as f64).sqrt();
        let (q, k, v) = (self.value(queries), self.value(keys), self.value(values));
        let mut out = Tensor::zeros(sq[0], sv[1]);
        let mut weights = Vec::with_capacity(segments.len());
        for (i, seg) in segments.iter().enumerate() {
            if seg.end > sk[0] {
                return Err(TensorError::IndexOutOfBounds {
                    op: "scaled_dot_attention",
                    index: seg.end,
                    len: sk[0],
                });
            }
            let qi = q.row_slice(i);
            let mut w: Vec<f64> = seg
                .clone()
                .map(|j| scale * dot(qi, k.row_slice(j)))
                .collect();
            softmax_in_place(&mut w);
            let o = out.row_slice_mut(i);
            for (wj, j) in w.iter().zip(seg.clone()) {
                for (ox, vx) in o.iter_mut().zip(v.row_slice(j)) {
                    *ox += wj * vx;
                }
            }
            weights.push(w);
        }
        let op = Op::Attention {
            q: queries,
            k: keys,
            v: values,
            segments: segments.to_vec(),
            weights: weights.clone(),
        };
        let var = self.push(out, op, &[queries, keys, values])?;
        Ok((var, weights))
    }

    /// Reverse pass from a `1 x 1` loss node.
    pub fn backward(&self, loss: Var) -> Result<Gradients, TensorError> {
        let s = self.shape(loss);
        if s != [1, 1] {
            return Err(shape_err("backward", s, [1, 1]));
        }
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], var: Var, g: Tensor) {
        if !self.nodes[var.0].requires_grad {
            return;
        }
        match &mut grads[var.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.requires_grad(*a) {
                    let ga = g.matmul(&self.value(*b).transpose());
                    self.accumulate(grads, *a, ga);
                }
                if self.requires_grad(*b) {
                    let gb = self.value(*a).transpose().matmul(g);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let ga = g.zip_map(self.value(*b), |x, y| x * y);
                let gb = g.zip_map(self.value(*a), |x, y| x * y);
                self.accumulate(grads, *a, ga);
                self.accumulate(grads, *b, gb);
            }
            Op::AddRow(a, row) => {
                self.accumulate(grads, *a, g.clone());
                let mut gr = vec![0.0; g.cols()];
                for r in 0..g.rows() {
                    for (o, x) in gr.iter_mut().zip(g.row_slice(r)) {
                        *o += x;
                    }
                }
                self.accumulate(grads, *row, Tensor::row(gr));
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, g.map(|x| c * x)),
            Op::AddScalar(a) => self.accumulate(grads, *a, g.clone()),
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for p in parts {
                    let w = self.shape(*p)[1];
                    let mut gp = Tensor::zeros(g.rows(), w);
                    for r in 0..g.rows() {
                        gp.row_slice_mut(r)
                            .copy_from_slice(&g.row_slice(r)[start..start + w]);
                    }
                    self.accumulate(grads, *p, gp);
                    start += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for p in parts {
                    let [h, w] = self.shape(*p);
                    let data = g.data()[start * w..(start + h) * w].to_vec();
                    self.accumulate(grads, *p, Tensor::new(h, w, data).expect("shape"));
                    start += h;
                }
            }
            Op::SliceCols(a, start) => {
                let [h, w] = self.shape(*a);
                let mut ga = Tensor::zeros(h, w);
                for r in 0..h {
                    ga.row_slice_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row_slice(r));
                }
                self.accumulate(grads, *a, ga);
            }
            Op::GatherRows(a, index) => {
                let [h, w] = self.shape(*a);
                let mut ga = Tensor::zeros(h, w);
                for (r, &i) in index.iter().enumerate() {
                    for (o, x) in ga.row_slice_mut(i).iter_mut().zip(g.row_slice(r)) {
                        *o += x;
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::SegmentMean(a, groups) => {
                let [h, w] = self.shape(*a);
                let mut ga = Tensor::zeros(h, w);
                for (gi, members) in groups.iter().enumerate() {
                    let scale = 1.0 / members.len() as f64;
                    for &m in members {
                        for (o, x) in ga.row_slice_mut(m).iter_mut().zip(g.row_slice(gi)) {
                            *o += scale * x;
                        }
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::MeanRows(a) => {
                let [h, w] = self.shape(*a);
                let scale = 1.0 / h as f64;
                let mut ga = Tensor::zeros(h, w);
                for r in 0..h {
                    for (o, x) in ga.row_slice_mut(r).iter_mut().zip(g.data()) {
                        *o = scale * x;
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::SumAll(a) => {
                let [h, w] = self.shape(*a);
                self.accumulate(grads, *a, Tensor::filled(h, w, g.item()));
            }
            Op::Sigmoid(a) => {
                self.accumulate(grads, *a, g.zip_map(y, |gx, s| gx * s * (1.0 - s)));
            }
            Op::Tanh(a) => {
                self.accumulate(grads, *a, g.zip_map(y, |gx, t| gx * (1.0 - t * t)));
            }
            Op::Relu(a) => {
                let ga = g.zip_map(self.value(*a), |gx, x| if x > 0.0 { gx } else { 0.0 });
                self.accumulate(grads, *a, ga);
            }
            Op::Cos(a) => {
                let ga = g.zip_map(self.value(*a), |gx, x| -gx * x.sin());
                self.accumulate(grads, *a, ga);
            }
            Op::Softmax(a) => {
                let mut ga = g.clone();
                for r in 0..y.rows() {
                    let yr = y.row_slice(r);
                    let inner = dot(g.row_slice(r), yr);
                    for (o, (gx, yx)) in ga.row_slice_mut(r).iter_mut().zip(g.row_slice(r).iter().zip(yr)) {
                        *o = yx * (gx - inner);
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::Euclidean(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let mut ga = Tensor::zeros(va.rows(), va.cols());
                for r in 0..va.rows() {
                    let d = y.get(r, 0);
                    if d == 0.0 {
                        continue;
                    }
                    let coef = g.get(r, 0) / d;
                    for ((o, x), z) in ga.row_slice_mut(r).iter_mut().zip(va.row_slice(r)).zip(vb.row_slice(r)) {
                        *o = coef * (x - z);
                    }
                }
                let gb = ga.map(|x| -x);
                self.accumulate(grads, *a, ga);
                self.accumulate(grads, *b, gb);
            }
            Op::BceWithLogits(a, targets) => {
                let x = self.value(*a);
                let data = x
                    .data()
                    .iter()
                    .zip(targets)
                    .zip(g.data())
                    .map(|((&xv, &t), &gv)| gv * (sigmoid(xv) - t))
                    .collect();
                let ga = Tensor::new(x.rows(), x.cols(), data).expect("shape");
                self.accumulate(grads, *a, ga);
            }
            Op::Transpose(a) => self.accumulate(grads, *a, g.transpose()),
            Op::Attention {
                q,
                k,
                v,
                segments,
                weights,
            } => {
                let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                let scale = 1.0 / (qv.cols() as f64).sqrt();
                let mut gq = Tensor::zeros(qv.rows(), qv.cols());
                let mut gk = Tensor::zeros(kv.rows(), kv.cols());
                let mut gv = Tensor::zeros(vv.rows(), vv.cols());
                for (i, (seg, w)) in segments.iter().zip(weights).enumerate() {
                    let go = g.row_slice(i);
                    // d weight_j = go . v_j, then back through softmax.
                    let dw: Vec<f64> = seg.clone().map(|j| dot(go, vv.row_slice(j))).collect();
                    let inner = dot(&dw, w);
                    for ((&wj, &dwj), j) in w.iter().zip(&dw).zip(seg.clone()) {
                        for (o, x) in gv.row_slice_mut(j).iter_mut().zip(go) {
                            *o += wj * x;
                        }
                        let ds = wj * (dwj - inner) * scale;
                        for (o, x) in gq.row_slice_mut(i).iter_mut().zip(kv.row_slice(j)) {
                            *o += ds * x;
                        }
                        for (o, x) in gk.row_slice_mut(j).iter_mut().zip(qv.row_slice(i)) {
                            *o += ds * x;
                        }
                    }
                }
                self.accumulate(grads, *q, gq);
                self.accumulate(grads, *k, gk);
                self.accumulate(grads, *v, gv);
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Numerically stable in-place softmax of one row.
fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in row.iter_mut() {
        *x /= total;
    }
}
