//! Tensor-level reverse-mode differentiation.
//!
//! Every primitive appends one node to a [`Tape`]. [`Tape::backward`] walks
//! the tape once in reverse order, accumulating gradients additively into
//! every input that requires them. Outputs are checked for NaN/Inf as they
//! are produced, so a numeric fault is reported by the op that caused it.

use super::{DiffError, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A user-defined differentiable operation.
///
/// The forward value is computed by the caller and handed to
/// [`Tape::custom`]; the op only has to provide the vector-Jacobian product.
pub trait CustomOp: Send + Sync {
    fn name(&self) -> &'static str;

    /// Returns one entry per input: the gradient contribution for that input,
    /// or `None` if the op does not propagate into it.
    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        grad_output: &Tensor,
    ) -> Result<Vec<Option<Tensor>>, DiffError>;
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Concat(Vec<Var>),
    Stack(Vec<Var>),
    Sum(Var),
    SumAxis(Var, usize),
    Exp(Var),
    Log(Var),
    LeakyRelu(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Softmax(Var),
    Dot(Var, Var),
    L2Norm(Var),
    Row(Var, usize),
    GatherRows(Var, Vec<usize>),
    Slice(Var, usize, usize),
    Reshape(Var),
    CircularCorrelation(Var, Var),
    ClampMin(Var, f64),
    Custom(Vec<Var>, Box<dyn CustomOp>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Concat(..) => "concat",
            Op::Stack(..) => "stack",
            Op::Sum(..) => "sum",
            Op::SumAxis(..) => "sum_axis",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Relu(..) => "relu",
            Op::Sigmoid(..) => "sigmoid",
            Op::Softmax(..) => "softmax",
            Op::Dot(..) => "dot",
            Op::L2Norm(..) => "l2_norm",
            Op::Row(..) => "row",
            Op::GatherRows(..) => "gather_rows",
            Op::Slice(..) => "slice",
            Op::Reshape(..) => "reshape",
            Op::CircularCorrelation(..) => "circular_correlation",
            Op::ClampMin(..) => "clamp_min",
            Op::Custom(_, op) => op.name(),
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Dot(a, b)
            | Op::CircularCorrelation(a, b) => vec![*a, *b],
            Op::Transpose(a)
            | Op::Scale(a, _)
            | Op::Sum(a)
            | Op::SumAxis(a, _)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::LeakyRelu(a, _)
            | Op::Relu(a)
            | Op::Sigmoid(a)
            | Op::Softmax(a)
            | Op::L2Norm(a)
            | Op::Row(a, _)
            | Op::GatherRows(a, _)
            | Op::Slice(a, _, _)
            | Op::Reshape(a)
            | Op::ClampMin(a, _) => vec![*a],
            Op::Concat(vs) | Op::Stack(vs) | Op::Custom(vs, _) => vs.clone(),
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of primitive operations.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by one backward pass, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn shape_err(op: &'static str, detail: String) -> DiffError {
    DiffError::Shape { op, detail }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<(), DiffError> {
    if a.shape() != b.shape() {
        return Err(shape_err(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn last_axis(t: &Tensor) -> usize {
    t.shape().last().copied().unwrap_or(1)
}

fn matmul_values(a: &Tensor, b: &Tensor) -> Result<Tensor, DiffError> {
    match (a.shape(), b.shape()) {
        (&[m, k], &[k2, n]) if k == k2 => {
            let (ad, bd) = (a.data(), b.data());
            let mut out = vec![0.0; m * n];
            for i in 0..m {
                let orow = &mut out[i * n..(i + 1) * n];
                for p in 0..k {
                    let av = ad[i * k + p];
                    if av == 0.0 {
                        continue;
                    }
                    let brow = &bd[p * n..(p + 1) * n];
                    for (o, bv) in orow.iter_mut().zip(brow) {
                        *o += av * bv;
                    }
                }
            }
            Tensor::new(vec![m, n], out)
        }
        (&[m, k], &[k2]) if k == k2 => {
            let (ad, bd) = (a.data(), b.data());
            let out = (0..m)
                .map(|i| ad[i * k..(i + 1) * k].iter().zip(bd).map(|(x, y)| x * y).sum())
                .collect();
            Ok(Tensor::vector(out))
        }
        (sa, sb) => Err(shape_err("matmul", format!("{:?} x {:?}", sa, sb))),
    }
}

fn transpose_values(a: &Tensor) -> Result<Tensor, DiffError> {
    let (m, n) = match a.shape() {
        &[m, n] => (m, n),
        s => return Err(shape_err("transpose", format!("{:?} is not a matrix", s))),
    };
    let d = a.data();
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = d[i * n + j];
        }
    }
    Tensor::new(vec![n, m], out)
}

fn correlate(a: &[f64], b: &[f64], out: &mut [f64]) {
    let d = a.len();
    for (k, o) in out.iter_mut().enumerate() {
        *o = (0..d).map(|m| a[m] * b[(m + k) % d]).sum();
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var, DiffError> {
        if !value.all_finite() {
            return Err(DiffError::NonFinite { op: op.name() });
        }
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var, DiffError> {
        let value = self.value(a).map(f);
        self.push(value, op)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let value = matmul_values(self.value(a), self.value(b))?;
        self.push(value, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, DiffError> {
        let value = transpose_values(self.value(a))?;
        self.push(value, Op::Transpose(a))
    }

    fn zip_with(
        &mut self,
        a: Var,
        b: Var,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var, DiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(op.name(), ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(value, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.zip_with(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var, DiffError> {
        self.unary(a, Op::Scale(a, c), |x| c * x)
    }

    /// Concatenation along the last axis. Matrices must agree on row count.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, DiffError> {
        if parts.is_empty() {
            return Err(shape_err("concat", "no inputs".into()));
        }
        let first = self.value(parts[0]).shape().to_vec();
        let lead = &first[..first.len().saturating_sub(1)];
        let rows: usize = lead.iter().product();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.value(p).shape();
            if s.len() != first.len() || s.is_empty() || &s[..s.len() - 1] != lead {
                return Err(shape_err("concat", format!("{:?} vs {:?}", first, s)));
            }
            widths.push(s[s.len() - 1]);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        let value = Tensor::new(shape, data)?;
        self.push(value, Op::Concat(parts.to_vec()))
    }

    /// Stacks equal-length vectors as the rows of a matrix.
    pub fn stack(&mut self, rows: &[Var]) -> Result<Var, DiffError> {
        if rows.is_empty() {
            return Err(shape_err("stack", "no inputs".into()));
        }
        let width = self.value(rows[0]).len();
        let mut data = Vec::with_capacity(rows.len() * width);
        for &r in rows {
            let t = self.value(r);
            if t.ndim() != 1 || t.len() != width {
                return Err(shape_err("stack", format!("row shape {:?}, expected [{}]", t.shape(), width)));
            }
            data.extend_from_slice(t.data());
        }
        let value = Tensor::new(vec![rows.len(), width], data)?;
        self.push(value, Op::Stack(rows.to_vec()))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, DiffError> {
        let value = Tensor::scalar(self.value(a).sum());
        self.push(value, Op::Sum(a))
    }

    /// Sums a matrix over `axis` (0 collapses rows, 1 collapses columns).
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var, DiffError> {
        let t = self.value(a);
        let (m, n) = match t.shape() {
            &[m, n] if axis < 2 => (m, n),
            s => return Err(shape_err("sum_axis", format!("{:?} axis {}", s, axis))),
        };
        let d = t.data();
        let out = if axis == 0 {
            (0..n).map(|j| (0..m).map(|i| d[i * n + j]).sum()).collect()
        } else {
            (0..m).map(|i| d[i * n..(i + 1) * n].iter().sum()).collect()
        };
        self.push(Tensor::vector(out), Op::SumAxis(a, axis))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, DiffError> {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Result<Var, DiffError> {
        self.unary(a, Op::Log(a), f64::ln)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var, DiffError> {
        self.unary(a, Op::LeakyRelu(a, slope), |x| if x > 0.0 { x } else { slope * x })
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, DiffError> {
        self.unary(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, DiffError> {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    /// Softmax along the last axis (each row of a matrix is normalized).
    pub fn softmax(&mut self, a: Var) -> Result<Var, DiffError> {
        let t = self.value(a);
        let w = last_axis(t);
        if w == 0 {
            return Err(shape_err("softmax", "empty axis".into()));
        }
        let mut data = t.data().to_vec();
        for row in data.chunks_mut(w) {
            softmax_in_place(row);
        }
        let value = Tensor::new(t.shape().to_vec(), data)?;
        self.push(value, Op::Softmax(a))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.ndim() != 1 {
            return Err(shape_err("dot", format!("{:?} is not a vector", ta.shape())));
        }
        same_shape("dot", ta, tb)?;
        let v = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).sum();
        self.push(Tensor::scalar(v), Op::Dot(a, b))
    }

    /// Euclidean norm along the last axis: a vector gives a scalar, a matrix
    /// gives one norm per row.
    pub fn l2_norm(&mut self, a: Var) -> Result<Var, DiffError> {
        let t = self.value(a);
        let w = last_axis(t);
        let norms: Vec<f64> = t.data().chunks(w.max(1)).map(|r| r.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
        let value = match t.ndim() {
            1 => Tensor::scalar(norms[0]),
            2 => Tensor::vector(norms),
            _ => return Err(shape_err("l2_norm", format!("{:?}", t.shape()))),
        };
        self.push(value, Op::L2Norm(a))
    }

    pub fn row(&mut self, a: Var, i: usize) -> Result<Var, DiffError> {
        let t = self.value(a);
        if t.ndim() != 2 || i >= t.rows() {
            return Err(shape_err("row", format!("row {} of {:?}", i, t.shape())));
        }
        let value = Tensor::vector(t.row(i).to_vec());
        self.push(value, Op::Row(a, i))
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var, DiffError> {
        let t = self.value(a);
        if t.ndim() != 2 {
            return Err(shape_err("gather_rows", format!("{:?} is not a matrix", t.shape())));
        }
        let (m, n) = (t.rows(), t.cols());
        let mut data = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            if i >= m {
                return Err(shape_err("gather_rows", format!("row {} of {}", i, m)));
            }
            data.extend_from_slice(t.row(i));
        }
        let value = Tensor::new(vec![idx.len(), n], data)?;
        self.push(value, Op::GatherRows(a, idx.to_vec()))
    }

    /// Slice `[start, start + len)` of the last axis.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var, DiffError> {
        let t = self.value(a);
        let w = last_axis(t);
        if t.ndim() == 0 || start + len > w {
            return Err(shape_err("slice", format!("[{}, {}) of {:?}", start, start + len, t.shape())));
        }
        let data: Vec<f64> = t.data().chunks(w).flat_map(|r| r[start..start + len].iter().copied()).collect();
        let mut shape = t.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        let value = Tensor::new(shape, data)?;
        self.push(value, Op::Slice(a, start, len))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, DiffError> {
        let value = self.value(a).clone().reshaped(shape.to_vec())?;
        self.push(value, Op::Reshape(a))
    }

    /// Circular correlation along the last axis:
    /// `out[k] = sum_m a[m] * b[(m + k) mod d]`.
    pub fn circular_correlation(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("circular_correlation", ta, tb)?;
        if ta.ndim() == 0 || ta.ndim() > 2 {
            return Err(shape_err("circular_correlation", format!("{:?}", ta.shape())));
        }
        let w = last_axis(ta);
        let mut out = vec![0.0; ta.len()];
        for ((ra, rb), ro) in ta.data().chunks(w).zip(tb.data().chunks(w)).zip(out.chunks_mut(w)) {
            correlate(ra, rb, ro);
        }
        let value = Tensor::new(ta.shape().to_vec(), out)?;
        self.push(value, Op::CircularCorrelation(a, b))
    }

    /// `max(x, floor)`; the gradient is zero where the floor is active.
    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Result<Var, DiffError> {
        self.unary(a, Op::ClampMin(a, floor), |x| x.max(floor))
    }

    /// Records a custom op whose forward value was computed by the caller.
    pub fn custom(&mut self, inputs: &[Var], output: Tensor, op: Box<dyn CustomOp>) -> Result<Var, DiffError> {
        self.push(output, Op::Custom(inputs.to_vec(), op))
    }

    /// Backward pass from a scalar.
    pub fn backward(&self, out: Var) -> Result<Gradients, DiffError> {
        let t = self.value(out);
        if t.len() != 1 {
            return Err(shape_err("backward", format!("output shape {:?} is not scalar", t.shape())));
        }
        let seed = Tensor::new(t.shape().to_vec(), vec![1.0])?;
        self.backward_from(out, seed)
    }

    /// Backward pass seeded with an arbitrary upstream gradient for `out`.
    pub fn backward_from(&self, out: Var, seed: Tensor) -> Result<Gradients, DiffError> {
        same_shape("backward", self.value(out), &seed)?;
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(seed);
        for idx in (0..=out.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accum(&self, grads: &mut [Option<Tensor>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let slot = &mut grads[v.0];
        let buf = slot.get_or_insert_with(|| Tensor::zeros(self.nodes[v.0].value.shape()));
        f(buf.data_mut());
    }

    fn accum_tensor(&self, grads: &mut [Option<Tensor>], v: Var, delta: &Tensor) {
        self.accum(grads, v, |buf| {
            for (b, d) in buf.iter_mut().zip(delta.data()) {
                *b += d;
            }
        });
    }

    fn accum_map(&self, grads: &mut [Option<Tensor>], v: Var, g: &Tensor, f: impl Fn(usize, f64) -> f64) {
        self.accum(grads, v, |buf| {
            for (k, (b, &gv)) in buf.iter_mut().zip(g.data()).enumerate() {
                *b += f(k, gv);
            }
        });
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<(), DiffError> {
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if tb.ndim() == 2 {
                    if self.requires_grad(*a) {
                        let da = matmul_values(g, &transpose_values(tb)?)?;
                        self.accum_tensor(grads, *a, &da);
                    }
                    if self.requires_grad(*b) {
                        let db = matmul_values(&transpose_values(ta)?, g)?;
                        self.accum_tensor(grads, *b, &db);
                    }
                } else {
                    let (m, k) = (ta.rows(), ta.cols());
                    let gd = g.data();
                    self.accum(grads, *a, |buf| {
                        for (row, g) in buf.chunks_mut(k).zip(&gd[..m]) {
                            for (x, y) in row.iter_mut().zip(tb.data()) {
                                *x += g * y;
                            }
                        }
                    });
                    self.accum(grads, *b, |buf| {
                        for (row, g) in ta.data().chunks(k).zip(&gd[..m]) {
                            for (x, y) in buf.iter_mut().zip(row) {
                                *x += y * g;
                            }
                        }
                    });
                }
            }
            Op::Transpose(a) => {
                let gt = transpose_values(g)?;
                self.accum_tensor(grads, *a, &gt);
            }
            Op::Add(a, b) => {
                self.accum_tensor(grads, *a, g);
                self.accum_tensor(grads, *b, g);
            }
            Op::Sub(a, b) => {
                self.accum_tensor(grads, *a, g);
                self.accum_map(grads, *b, g, |_, gv| -gv);
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                self.accum_map(grads, *a, g, |k, gv| gv * tb[k]);
                self.accum_map(grads, *b, g, |k, gv| gv * ta[k]);
            }
            Op::Scale(a, c) => self.accum_map(grads, *a, g, |_, gv| c * gv),
            Op::Concat(parts) => {
                let w_out = last_axis(g);
                let mut offset = 0;
                for &p in parts {
                    let w = last_axis(self.value(p));
                    let gd = g.data();
                    self.accum(grads, p, |buf| {
                        for (r, row) in buf.chunks_mut(w).enumerate() {
                            for (c, b) in row.iter_mut().enumerate() {
                                *b += gd[r * w_out + offset + c];
                            }
                        }
                    });
                    offset += w;
                }
            }
            Op::Stack(rows) => {
                let w = g.cols();
                for (r, &v) in rows.iter().enumerate() {
                    let gr = &g.data()[r * w..(r + 1) * w];
                    self.accum(grads, v, |buf| {
                        for (b, gv) in buf.iter_mut().zip(gr) {
                            *b += gv;
                        }
                    });
                }
            }
            Op::Sum(a) => {
                let gv = g.item();
                self.accum(grads, *a, |buf| buf.iter_mut().for_each(|b| *b += gv));
            }
            Op::SumAxis(a, axis) => {
                let n = self.value(*a).cols();
                let gd = g.data();
                let axis = *axis;
                self.accum(grads, *a, |buf| {
                    for (k, b) in buf.iter_mut().enumerate() {
                        let (i, j) = (k / n, k % n);
                        *b += if axis == 0 { gd[j] } else { gd[i] };
                    }
                });
            }
            Op::Exp(a) => self.accum_map(grads, *a, g, |k, gv| gv * y.data()[k]),
            Op::Log(a) => {
                let x = self.value(*a).data();
                self.accum_map(grads, *a, g, |k, gv| gv / x[k]);
            }
            Op::LeakyRelu(a, slope) => {
                let x = self.value(*a).data();
                self.accum_map(grads, *a, g, |k, gv| if x[k] > 0.0 { gv } else { slope * gv });
            }
            Op::Relu(a) => {
                let x = self.value(*a).data();
                self.accum_map(grads, *a, g, |k, gv| if x[k] > 0.0 { gv } else { 0.0 });
            }
            Op::Sigmoid(a) => {
                let yd = y.data();
                self.accum_map(grads, *a, g, |k, gv| gv * yd[k] * (1.0 - yd[k]));
            }
            Op::Softmax(a) => {
                let w = last_axis(y);
                let (yd, gd) = (y.data(), g.data());
                self.accum(grads, *a, |buf| {
                    for r in 0..yd.len() / w {
                        let (yr, gr) = (&yd[r * w..(r + 1) * w], &gd[r * w..(r + 1) * w]);
                        let inner: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for c in 0..w {
                            buf[r * w + c] += yr[c] * (gr[c] - inner);
                        }
                    }
                });
            }
            Op::Dot(a, b) => {
                let gv = g.item();
                let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                self.accum(grads, *a, |buf| buf.iter_mut().zip(tb).for_each(|(x, t)| *x += gv * t));
                self.accum(grads, *b, |buf| buf.iter_mut().zip(ta).for_each(|(x, t)| *x += gv * t));
            }
            Op::L2Norm(a) => {
                let x = self.value(*a);
                let w = last_axis(x);
                let (xd, yd, gd) = (x.data(), y.data(), g.data());
                self.accum(grads, *a, |buf| {
                    for (k, b) in buf.iter_mut().enumerate() {
                        let r = k / w;
                        if yd[r] > 0.0 {
                            *b += gd[r] * xd[k] / yd[r];
                        }
                    }
                });
            }
            Op::Row(a, i) => {
                let n = g.len();
                let i = *i;
                self.accum(grads, *a, |buf| {
                    for (b, gv) in buf[i * n..(i + 1) * n].iter_mut().zip(g.data()) {
                        *b += gv;
                    }
                });
            }
            Op::GatherRows(a, idx) => {
                let n = g.cols();
                self.accum(grads, *a, |buf| {
                    for (r, &i) in idx.iter().enumerate() {
                        for c in 0..n {
                            buf[i * n + c] += g.data()[r * n + c];
                        }
                    }
                });
            }
            Op::Slice(a, start, len) => {
                let w = last_axis(self.value(*a));
                let (start, len) = (*start, *len);
                self.accum(grads, *a, |buf| {
                    for (row, grow) in buf.chunks_mut(w).zip(g.data().chunks(len)) {
                        for (b, gv) in row[start..start + len].iter_mut().zip(grow) {
                            *b += gv;
                        }
                    }
                });
            }
            Op::Reshape(a) => self.accum_tensor(grads, *a, g),
            Op::CircularCorrelation(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let d = last_axis(ta);
                let gd = g.data();
                self.accum(grads, *a, |buf| {
                    for (r, row) in buf.chunks_mut(d).enumerate() {
                        let (br, gr) = (&tb.data()[r * d..(r + 1) * d], &gd[r * d..(r + 1) * d]);
                        for (m, x) in row.iter_mut().enumerate() {
                            *x += (0..d).map(|k| gr[k] * br[(m + k) % d]).sum::<f64>();
                        }
                    }
                });
                self.accum(grads, *b, |buf| {
                    for (r, row) in buf.chunks_mut(d).enumerate() {
                        let (ar, gr) = (&ta.data()[r * d..(r + 1) * d], &gd[r * d..(r + 1) * d]);
                        for (n, x) in row.iter_mut().enumerate() {
                            *x += (0..d).map(|k| gr[k] * ar[(n + d - k) % d]).sum::<f64>();
                        }
                    }
                });
            }
            Op::ClampMin(a, floor) => {
                let x = self.value(*a).data();
                self.accum_map(grads, *a, g, |k, gv| if x[k] > *floor { gv } else { 0.0 });
            }
            Op::Custom(inputs, op) => {
                let values: Vec<&Tensor> = inputs.iter().map(|v| self.value(*v)).collect();
                let deltas = op.backward(&values, y, g)?;
                if deltas.len() != inputs.len() {
                    return Err(shape_err(op.name(), "backward returned wrong number of gradients".into()));
                }
                for (v, delta) in inputs.iter().zip(deltas) {
                    if let Some(delta) = delta {
                        same_shape(op.name(), self.value(*v), &delta)?;
                        self.accum_tensor(grads, *v, &delta);
                    }
                }
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

/// Max-subtracted softmax, in place.
pub fn softmax_in_place(row: &mut [f64]) {
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
