//! Define-by-run tape and the operation set used by the model.

use super::kernels;
use super::{Element, Shape, TensorError, TensorResult};
use std::sync::Arc;

/// Division guard for l1 normalization.
pub const L1_EPS: f64 = 1e-12;
/// Slices whose mass falls at or below this floor normalize to the uniform
/// distribution instead of dividing by a vanishing sum; this keeps every
/// output slice summing to 1 regardless of input scale.
pub const L1_UNIFORM_FLOOR: f64 = 1e-6;

const GELU_C1: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C2: f64 = 0.044_715;

/// Handle into a [`Graph`]; only valid for the graph that produced it.
#[derive(Copy, Clone, PartialEq, Eq, Debug)]
pub struct TensorId(pub(crate) usize);

enum Op<T: Element> {
    Leaf,
    Matmul(TensorId, TensorId),
    Add(TensorId, TensorId),
    AddRow(TensorId, TensorId),
    Mul(TensorId, TensorId),
    MulScalar(TensorId, T),
    Gelu(TensorId),
    Softmax { x: TensorId, axis: usize },
    L1Normalize { x: TensorId, axis: usize, sums: Vec<T>, uniform: Vec<bool> },
    LayerNorm { x: TensorId, gain: TensorId, bias: TensorId, mean: Vec<T>, rstd: Vec<T> },
    ConcatRows(Vec<TensorId>),
    ConcatCols(Vec<TensorId>),
    SliceRows { x: TensorId, start: usize },
    SliceCols { x: TensorId, start: usize },
    Transpose(TensorId),
    Reshape(TensorId),
    Sum(TensorId),
    CrossEntropy { logits: TensorId, label: usize, probs: Vec<T> },
}

struct Node<T: Element> {
    shape: Shape,
    value: Arc<Vec<T>>,
    grad: Option<Vec<T>>,
    requires_grad: bool,
    op: Op<T>,
}

/// Ordered record of executed operations. Append order is a topological
/// order by construction, so backward is a single reverse sweep.
pub struct Graph<T: Element> {
    nodes: Vec<Node<T>>,
    backward_done: bool,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), backward_done: false }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    fn push(&mut self, shape: Shape, value: Vec<T>, requires_grad: bool, op: Op<T>) -> TensorId {
        // Non-finite values are allowed to flow: divergence is detected and
        // reported by the training loop, not by individual ops.
        debug_assert_eq!(shape.numel(), value.len());
        self.nodes.push(Node { shape, value: Arc::new(value), grad: None, requires_grad, op });
        TensorId(self.nodes.len() - 1)
    }

    fn check(&self, id: TensorId) -> TensorResult<&Node<T>> {
        self.nodes.get(id.0).ok_or(TensorError::UnknownTensor(id.0))
    }

    pub fn shape(&self, id: TensorId) -> &Shape {
        &self.nodes[id.0].shape
    }

    pub fn value(&self, id: TensorId) -> &[T] {
        &self.nodes[id.0].value
    }

    pub fn requires_grad(&self, id: TensorId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Gradient of the last backward pass; `None` until backward has reached
    /// this tensor or when it does not require gradients.
    pub fn grad(&self, id: TensorId) -> Option<&[T]> {
        self.nodes[id.0].grad.as_deref()
    }

    pub fn leaf(&mut self, data: Vec<T>, shape: Shape, requires_grad: bool) -> TensorResult<TensorId> {
        if data.len() != shape.numel() {
            return Err(TensorError::ShapeMismatch(format!(
                "leaf data length {} does not match shape {shape}",
                data.len()
            )));
        }
        Ok(self.push(shape, data, requires_grad, Op::Leaf))
    }

    /// Leaf over a shared buffer; used to bind model parameters without
    /// copying them into every per-sample graph.
    pub fn leaf_shared(
        &mut self,
        data: Arc<Vec<T>>,
        shape: Shape,
        requires_grad: bool,
    ) -> TensorResult<TensorId> {
        if data.len() != shape.numel() {
            return Err(TensorError::ShapeMismatch(format!(
                "leaf data length {} does not match shape {shape}",
                data.len()
            )));
        }
        self.nodes.push(Node { shape, value: data, grad: None, requires_grad, op: Op::Leaf });
        Ok(TensorId(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> TensorResult<TensorId> {
        let (na, nb) = (self.check(a)?, self.check(b)?);
        if na.shape.ndim() != 2 || nb.shape.ndim() != 2 {
            return Err(TensorError::ShapeMismatch(format!(
                "matmul needs rank-2 operands, got {} and {}",
                na.shape, nb.shape
            )));
        }
        let (m, k) = (na.shape.rows(), na.shape.cols());
        let (k2, n) = (nb.shape.rows(), nb.shape.cols());
        if k != k2 {
            return Err(TensorError::ShapeMismatch(format!(
                "matmul inner dims differ: {} vs {}",
                na.shape, nb.shape
            )));
        }
        let value = kernels::matmul(&na.value, &nb.value, m, k, n);
        let rg = na.requires_grad || nb.requires_grad;
        Ok(self.push(Shape::matrix(m, n), value, rg, Op::Matmul(a, b)))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> TensorResult<TensorId> {
        let (na, nb) = (self.check(a)?, self.check(b)?);
        if na.shape != nb.shape {
            return Err(TensorError::ShapeMismatch(format!(
                "add operands differ: {} vs {}",
                na.shape, nb.shape
            )));
        }
        let value = na.value.iter().zip(nb.value.iter()).map(|(&x, &y)| x + y).collect();
        let rg = na.requires_grad || nb.requires_grad;
        Ok(self.push(na.shape.clone(), value, rg, Op::Add(a, b)))
    }

    /// Broadcast a rank-1 vector across every row of a matrix.
    pub fn add_row(&mut self, a: TensorId, v: TensorId) -> TensorResult<TensorId> {
        let (na, nv) = (self.check(a)?, self.check(v)?);
        if nv.shape.ndim() != 1 || nv.shape.cols() != na.shape.cols() {
            return Err(TensorError::ShapeMismatch(format!(
                "add_row needs a length-{} vector, got {}",
                na.shape.cols(),
                nv.shape
            )));
        }
        let cols = na.shape.cols();
        let value = na
            .value
            .iter()
            .enumerate()
            .map(|(i, &x)| x + nv.value[i % cols])
            .collect();
        let rg = na.requires_grad || nv.requires_grad;
        Ok(self.push(na.shape.clone(), value, rg, Op::AddRow(a, v)))
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> TensorResult<TensorId> {
        let (na, nb) = (self.check(a)?, self.check(b)?);
        if na.shape != nb.shape {
            return Err(TensorError::ShapeMismatch(format!(
                "mul operands differ: {} vs {}",
                na.shape, nb.shape
            )));
        }
        let value = na.value.iter().zip(nb.value.iter()).map(|(&x, &y)| x * y).collect();
        let rg = na.requires_grad || nb.requires_grad;
        Ok(self.push(na.shape.clone(), value, rg, Op::Mul(a, b)))
    }

    pub fn mul_scalar(&mut self, a: TensorId, s: T) -> TensorResult<TensorId> {
        let na = self.check(a)?;
        let value = na.value.iter().map(|&x| x * s).collect();
        let rg = na.requires_grad;
        Ok(self.push(na.shape.clone(), value, rg, Op::MulScalar(a, s)))
    }

    /// GELU in its tanh form: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
    pub fn gelu(&mut self, a: TensorId) -> TensorResult<TensorId> {
        let na = self.check(a)?;
        let c1 = T::from_f64c(GELU_C1);
        let c2 = T::from_f64c(GELU_C2);
        let half = T::from_f64c(0.5);
        let value = na
            .value
            .iter()
            .map(|&x| half * x * (T::one() + (c1 * (x + c2 * x * x * x)).tanh()))
            .collect();
        let rg = na.requires_grad;
        Ok(self.push(na.shape.clone(), value, rg, Op::Gelu(a)))
    }

    fn check_axis(&self, id: TensorId, axis: usize) -> TensorResult<(usize, usize)> {
        let node = self.check(id)?;
        if axis > 1 {
            return Err(TensorError::InvalidAxis { axis, ndim: node.shape.ndim() });
        }
        Ok((node.shape.rows(), node.shape.cols()))
    }

    /// Numerically stable softmax along `axis` (0 = down each column,
    /// 1 = along each row; rank-1 tensors act as a single row).
    pub fn softmax_axis(&mut self, x: TensorId, axis: usize) -> TensorResult<TensorId> {
        let (rows, cols) = self.check_axis(x, axis)?;
        let nx = &self.nodes[x.0];
        let mut value = vec![T::zero(); rows * cols];
        for s in 0..slice_count(axis, rows, cols) {
            let idx: Vec<usize> = slice_indices(axis, s, rows, cols).collect();
            let max = idx
                .iter()
                .map(|&i| nx.value[i])
                .fold(T::neg_infinity(), |a, b| if b > a { b } else { a });
            let mut total = T::zero();
            for &i in &idx {
                let e = (nx.value[i] - max).exp();
                value[i] = e;
                total += e;
            }
            for &i in &idx {
                value[i] = value[i] / total;
            }
        }
        let rg = nx.requires_grad;
        let shape = nx.shape.clone();
        Ok(self.push(shape, value, rg, Op::Softmax { x, axis }))
    }

    /// Divide each slice along `axis` by its sum plus [`L1_EPS`]. Slices with
    /// mass at or below [`L1_UNIFORM_FLOOR`] become uniform (1/len each) with
    /// zero gradient, covering the all-zero convention.
    pub fn l1_normalize_axis(&mut self, x: TensorId, axis: usize) -> TensorResult<TensorId> {
        let (rows, cols) = self.check_axis(x, axis)?;
        let nx = &self.nodes[x.0];
        let mut value = vec![T::zero(); rows * cols];
        let n_slices = slice_count(axis, rows, cols);
        let slice_len = if axis == 1 { cols } else { rows };
        let mut sums = vec![T::zero(); n_slices];
        let mut uniform = vec![false; n_slices];
        let eps = T::from_f64c(L1_EPS);
        let floor = T::from_f64c(L1_UNIFORM_FLOOR);
        for s in 0..n_slices {
            let idx: Vec<usize> = slice_indices(axis, s, rows, cols).collect();
            let total: T = idx.iter().map(|&i| nx.value[i]).sum();
            sums[s] = total;
            if total <= floor {
                uniform[s] = true;
                let u = T::one() / T::from_f64c(slice_len as f64);
                for &i in &idx {
                    value[i] = u;
                }
            } else {
                let q = total + eps;
                for &i in &idx {
                    value[i] = nx.value[i] / q;
                }
            }
        }
        let rg = nx.requires_grad;
        let shape = nx.shape.clone();
        Ok(self.push(shape, value, rg, Op::L1Normalize { x, axis, sums, uniform }))
    }

    /// Layer normalization over the last axis with learnable gain and bias.
    pub fn layer_norm(
        &mut self,
        x: TensorId,
        gain: TensorId,
        bias: TensorId,
        eps: T,
    ) -> TensorResult<TensorId> {
        let nx = self.check(x)?;
        let (rows, cols) = (nx.shape.rows(), nx.shape.cols());
        for (name, id) in [("gain", gain), ("bias", bias)] {
            let n = self.check(id)?;
            if n.shape.ndim() != 1 || n.shape.cols() != cols {
                return Err(TensorError::ShapeMismatch(format!(
                    "layer_norm {name} must be a length-{cols} vector, got {}",
                    n.shape
                )));
            }
        }
        let nx = &self.nodes[x.0];
        let ng = &self.nodes[gain.0];
        let nb = &self.nodes[bias.0];
        let inv_n = T::one() / T::from_f64c(cols as f64);
        let mut value = vec![T::zero(); rows * cols];
        let mut mean = vec![T::zero(); rows];
        let mut rstd = vec![T::zero(); rows];
        for r in 0..rows {
            let row = &nx.value[r * cols..(r + 1) * cols];
            let mu: T = row.iter().copied().sum::<T>() * inv_n;
            let var: T = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() * inv_n;
            let rs = T::one() / (var + eps).sqrt();
            mean[r] = mu;
            rstd[r] = rs;
            for c in 0..cols {
                value[r * cols + c] = (row[c] - mu) * rs * ng.value[c] + nb.value[c];
            }
        }
        let rg = nx.requires_grad || ng.requires_grad || nb.requires_grad;
        let shape = nx.shape.clone();
        Ok(self.push(shape, value, rg, Op::LayerNorm { x, gain, bias, mean, rstd }))
    }

    pub fn concat_rows(&mut self, parts: &[TensorId]) -> TensorResult<TensorId> {
        if parts.is_empty() {
            return Err(TensorError::ShapeMismatch("concat_rows of zero tensors".into()));
        }
        let cols = self.check(parts[0])?.shape.cols();
        let mut rows = 0;
        for &p in parts {
            let n = self.check(p)?;
            if n.shape.ndim() != 2 || n.shape.cols() != cols {
                return Err(TensorError::ShapeMismatch(format!(
                    "concat_rows needs matching column counts, got {}",
                    n.shape
                )));
            }
            rows += n.shape.rows();
        }
        let mut value = Vec::with_capacity(rows * cols);
        let mut rg = false;
        for &p in parts {
            value.extend_from_slice(&self.nodes[p.0].value);
            rg |= self.nodes[p.0].requires_grad;
        }
        Ok(self.push(Shape::matrix(rows, cols), value, rg, Op::ConcatRows(parts.to_vec())))
    }

    /// Concatenation along the last axis; joins per-head outputs.
    pub fn concat_cols(&mut self, parts: &[TensorId]) -> TensorResult<TensorId> {
        if parts.is_empty() {
            return Err(TensorError::ShapeMismatch("concat_cols of zero tensors".into()));
        }
        let rows = self.check(parts[0])?.shape.rows();
        let mut cols = 0;
        for &p in parts {
            let n = self.check(p)?;
            if n.shape.ndim() != 2 || n.shape.rows() != rows {
                return Err(TensorError::ShapeMismatch(format!(
                    "concat_cols needs matching row counts, got {}",
                    n.shape
                )));
            }
            cols += n.shape.cols();
        }
        let mut value = vec![T::zero(); rows * cols];
        let mut rg = false;
        let mut offset = 0;
        for &p in parts {
            let n = &self.nodes[p.0];
            let w = n.shape.cols();
            for r in 0..rows {
                value[r * cols + offset..r * cols + offset + w]
                    .copy_from_slice(&n.value[r * w..(r + 1) * w]);
            }
            offset += w;
            rg |= n.requires_grad;
        }
        Ok(self.push(Shape::matrix(rows, cols), value, rg, Op::ConcatCols(parts.to_vec())))
    }

    /// Contiguous row slice; extracts token rows such as the class token.
    pub fn slice_rows(&mut self, x: TensorId, start: usize, len: usize) -> TensorResult<TensorId> {
        let nx = self.check(x)?;
        let (rows, cols) = (nx.shape.rows(), nx.shape.cols());
        if nx.shape.ndim() != 2 || len == 0 || start + len > rows {
            return Err(TensorError::ShapeMismatch(format!(
                "slice_rows {start}..{} out of {}",
                start + len,
                nx.shape
            )));
        }
        let value = nx.value[start * cols..(start + len) * cols].to_vec();
        let rg = nx.requires_grad;
        Ok(self.push(Shape::matrix(len, cols), value, rg, Op::SliceRows { x, start }))
    }

    /// Contiguous column slice; extracts per-head channels.
    pub fn slice_cols(&mut self, x: TensorId, start: usize, len: usize) -> TensorResult<TensorId> {
        let nx = self.check(x)?;
        let (rows, cols) = (nx.shape.rows(), nx.shape.cols());
        if nx.shape.ndim() != 2 || len == 0 || start + len > cols {
            return Err(TensorError::ShapeMismatch(format!(
                "slice_cols {start}..{} out of {}",
                start + len,
                nx.shape
            )));
        }
        let mut value = Vec::with_capacity(rows * len);
        for r in 0..rows {
            value.extend_from_slice(&nx.value[r * cols + start..r * cols + start + len]);
        }
        let rg = nx.requires_grad;
        Ok(self.push(Shape::matrix(rows, len), value, rg, Op::SliceCols { x, start }))
    }

    pub fn transpose(&mut self, x: TensorId) -> TensorResult<TensorId> {
        let nx = self.check(x)?;
        if nx.shape.ndim() != 2 {
            return Err(TensorError::ShapeMismatch(format!(
                "transpose needs a rank-2 tensor, got {}",
                nx.shape
            )));
        }
        let (rows, cols) = (nx.shape.rows(), nx.shape.cols());
        let value = kernels::transpose(&nx.value, rows, cols);
        let rg = nx.requires_grad;
        Ok(self.push(Shape::matrix(cols, rows), value, rg, Op::Transpose(x)))
    }

    pub fn reshape(&mut self, x: TensorId, shape: Shape) -> TensorResult<TensorId> {
        let nx = self.check(x)?;
        if nx.shape.numel() != shape.numel() {
            return Err(TensorError::ShapeMismatch(format!(
                "reshape {} to {shape} changes element count",
                nx.shape
            )));
        }
        let value = Arc::clone(&nx.value);
        let rg = nx.requires_grad;
        self.nodes.push(Node { shape, value, grad: None, requires_grad: rg, op: Op::Reshape(x) });
        Ok(TensorId(self.nodes.len() - 1))
    }

    pub fn sum(&mut self, x: TensorId) -> TensorResult<TensorId> {
        let nx = self.check(x)?;
        let total: T = nx.value.iter().copied().sum();
        let rg = nx.requires_grad;
        Ok(self.push(Shape::vector(1), vec![total], rg, Op::Sum(x)))
    }

    /// Cross-entropy of a logit vector against an integer label, computed as
    /// logsumexp(logits) - logits[label] so the loss stays finite for any
    /// finite logits.
    pub fn cross_entropy(&mut self, logits: TensorId, label: usize) -> TensorResult<TensorId> {
        let nl = self.check(logits)?;
        let classes = nl.shape.numel();
        if nl.shape.rows() != 1 {
            return Err(TensorError::ShapeMismatch(format!(
                "cross_entropy needs a single logit row, got {}",
                nl.shape
            )));
        }
        if label >= classes {
            return Err(TensorError::LabelOutOfRange { label, classes });
        }
        let max = nl.value.iter().copied().fold(T::neg_infinity(), |a, b| if b > a { b } else { a });
        let mut probs: Vec<T> = nl.value.iter().map(|&v| (v - max).exp()).collect();
        let total: T = probs.iter().copied().sum();
        for p in &mut probs {
            *p = *p / total;
        }
        let loss = total.ln() + max - nl.value[label];
        let rg = nl.requires_grad;
        Ok(self.push(
            Shape::vector(1),
            vec![loss],
            rg,
            Op::CrossEntropy { logits, label, probs },
        ))
    }

    /// Reverse sweep from a scalar loss. Populates `grad` for every tensor
    /// with `requires_grad`. A graph can run backward once; a second call
    /// reports a stale graph.
    pub fn backward(&mut self, loss: TensorId) -> TensorResult<()> {
        let nl = self.check(loss)?;
        if nl.shape.numel() != 1 {
            return Err(TensorError::NonScalarLoss(nl.shape.numel()));
        }
        let loss_requires_grad = nl.requires_grad;
        if self.backward_done {
            return Err(TensorError::StaleGraph);
        }
        self.backward_done = true;
        if !loss_requires_grad {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            if self.nodes[idx].grad.is_none() || !self.nodes[idx].requires_grad {
                continue;
            }
            let (before, rest) = self.nodes.split_at_mut(idx);
            let node = &rest[0];
            let out_grad = node.grad.as_ref().expect("checked above");
            backprop(node, out_grad, before);
        }
        Ok(())
    }
}

/// Number of slices along `axis` for a rows x cols tensor.
fn slice_count(axis: usize, rows: usize, cols: usize) -> usize {
    if axis == 1 {
        rows
    } else {
        cols
    }
}

/// Flat indices of slice `s` along `axis`.
fn slice_indices(axis: usize, s: usize, rows: usize, cols: usize) -> impl Iterator<Item = usize> {
    let (start, step, len) = if axis == 1 { (s * cols, 1, cols) } else { (s, cols, rows) };
    (0..len).map(move |i| start + i * step)
}

fn accumulate<T: Element>(nodes: &mut [Node<T>], id: TensorId, contribution: &[T]) {
    let node = &mut nodes[id.0];
    if !node.requires_grad {
        return;
    }
    let grad = node.grad.get_or_insert_with(|| vec![T::zero(); node.shape.numel()]);
    for (g, &c) in grad.iter_mut().zip(contribution) {
        *g += c;
    }
}

fn backprop<T: Element>(node: &Node<T>, dy: &[T], before: &mut [Node<T>]) {
    match &node.op {
        Op::Leaf => {}
        Op::Matmul(a, b) => {
            let (m, n) = (node.shape.rows(), node.shape.cols());
            let k = before[a.0].shape.cols();
            if before[a.0].requires_grad {
                let da = kernels::matmul_nt(dy, &before[b.0].value, m, n, k);
                // matmul_nt computed dy [m x n] * B^T with B row-major [k x n]:
                // arguments are (a=dy, b=B, m, k=n, n=k).
                accumulate(before, *a, &da);
            }
            if before[b.0].requires_grad {
                let db = kernels::matmul_tn(&before[a.0].value, dy, k, m, n);
                accumulate(before, *b, &db);
            }
        }
        Op::Add(a, b) => {
            accumulate(before, *a, dy);
            accumulate(before, *b, dy);
        }
        Op::AddRow(a, v) => {
            accumulate(before, *a, dy);
            if before[v.0].requires_grad {
                let cols = node.shape.cols();
                let mut dv = vec![T::zero(); cols];
                for (i, &g) in dy.iter().enumerate() {
                    dv[i % cols] += g;
                }
                accumulate(before, *v, &dv);
            }
        }
        Op::Mul(a, b) => {
            if before[a.0].requires_grad {
                let da: Vec<T> =
                    dy.iter().zip(before[b.0].value.iter()).map(|(&g, &y)| g * y).collect();
                accumulate(before, *a, &da);
            }
            if before[b.0].requires_grad {
                let db: Vec<T> =
                    dy.iter().zip(before[a.0].value.iter()).map(|(&g, &x)| g * x).collect();
                accumulate(before, *b, &db);
            }
        }
        Op::MulScalar(a, s) => {
            let da: Vec<T> = dy.iter().map(|&g| g * *s).collect();
            accumulate(before, *a, &da);
        }
        Op::Gelu(a) => {
            let c1 = T::from_f64c(GELU_C1);
            let c2 = T::from_f64c(GELU_C2);
            let half = T::from_f64c(0.5);
            let three = T::from_f64c(3.0);
            let da: Vec<T> = dy
                .iter()
                .zip(before[a.0].value.iter())
                .map(|(&g, &x)| {
                    let u = c1 * (x + c2 * x * x * x);
                    let t = u.tanh();
                    let sech2 = T::one() - t * t;
                    let du = c1 * (T::one() + three * c2 * x * x);
                    g * (half * (T::one() + t) + half * x * sech2 * du)
                })
                .collect();
            accumulate(before, *a, &da);
        }
        Op::Softmax { x, axis } => {
            let (rows, cols) = (node.shape.rows(), node.shape.cols());
            let y = &node.value;
            let mut dx = vec![T::zero(); y.len()];
            for s in 0..slice_count(*axis, rows, cols) {
                let idx: Vec<usize> = slice_indices(*axis, s, rows, cols).collect();
                let dot: T = idx.iter().map(|&i| dy[i] * y[i]).sum();
                for &i in &idx {
                    dx[i] = y[i] * (dy[i] - dot);
                }
            }
            accumulate(before, *x, &dx);
        }
        Op::L1Normalize { x, axis, sums, uniform } => {
            let (rows, cols) = (node.shape.rows(), node.shape.cols());
            let xin = &before[x.0].value;
            let eps = T::from_f64c(L1_EPS);
            let mut dx = vec![T::zero(); xin.len()];
            for s in 0..slice_count(*axis, rows, cols) {
                if uniform[s] {
                    continue; // constant output, zero gradient
                }
                let q = sums[s] + eps;
                let idx: Vec<usize> = slice_indices(*axis, s, rows, cols).collect();
                let dot: T = idx.iter().map(|&i| dy[i] * xin[i]).sum();
                let qq = q * q;
                for &i in &idx {
                    dx[i] = dy[i] / q - dot / qq;
                }
            }
            accumulate(before, *x, &dx);
        }
        Op::LayerNorm { x, gain, bias, mean, rstd } => {
            let (rows, cols) = (node.shape.rows(), node.shape.cols());
            let xin = &before[x.0].value;
            let g = &before[gain.0].value;
            let inv_n = T::one() / T::from_f64c(cols as f64);
            let mut dx = vec![T::zero(); xin.len()];
            let mut dgain = vec![T::zero(); cols];
            let mut dbias = vec![T::zero(); cols];
            for r in 0..rows {
                let base = r * cols;
                let mut h_mean = T::zero();
                let mut hx_mean = T::zero();
                for c in 0..cols {
                    let xh = (xin[base + c] - mean[r]) * rstd[r];
                    let h = dy[base + c] * g[c];
                    dgain[c] += dy[base + c] * xh;
                    dbias[c] += dy[base + c];
                    h_mean += h;
                    hx_mean += h * xh;
                }
                h_mean *= inv_n;
                hx_mean *= inv_n;
                for c in 0..cols {
                    let xh = (xin[base + c] - mean[r]) * rstd[r];
                    let h = dy[base + c] * g[c];
                    dx[base + c] = rstd[r] * (h - h_mean - xh * hx_mean);
                }
            }
            accumulate(before, *x, &dx);
            accumulate(before, *gain, &dgain);
            accumulate(before, *bias, &dbias);
        }
        Op::ConcatRows(parts) => {
            let cols = node.shape.cols();
            let mut row = 0;
            for &p in parts {
                let rows = before[p.0].shape.rows();
                let slice = &dy[row * cols..(row + rows) * cols];
                accumulate(before, p, slice);
                row += rows;
            }
        }
        Op::ConcatCols(parts) => {
            let (rows, cols) = (node.shape.rows(), node.shape.cols());
            let mut offset = 0;
            for &p in parts {
                let w = before[p.0].shape.cols();
                if before[p.0].requires_grad {
                    let mut dp = vec![T::zero(); rows * w];
                    for r in 0..rows {
                        dp[r * w..(r + 1) * w]
                            .copy_from_slice(&dy[r * cols + offset..r * cols + offset + w]);
                    }
                    accumulate(before, p, &dp);
                }
                offset += w;
            }
        }
        Op::SliceRows { x, start } => {
            let cols = node.shape.cols();
            let src = &before[x.0];
            let mut dx = vec![T::zero(); src.shape.numel()];
            dx[start * cols..start * cols + dy.len()].copy_from_slice(dy);
            accumulate(before, *x, &dx);
        }
        Op::SliceCols { x, start } => {
            let (rows, len) = (node.shape.rows(), node.shape.cols());
            let src_cols = before[x.0].shape.cols();
            let mut dx = vec![T::zero(); before[x.0].shape.numel()];
            for r in 0..rows {
                dx[r * src_cols + start..r * src_cols + start + len]
                    .copy_from_slice(&dy[r * len..(r + 1) * len]);
            }
            accumulate(before, *x, &dx);
        }
        Op::Transpose(x) => {
            let (rows, cols) = (node.shape.rows(), node.shape.cols());
            let dx = kernels::transpose(dy, rows, cols);
            accumulate(before, *x, &dx);
        }
        Op::Reshape(x) => {
            accumulate(before, *x, dy);
        }
        Op::Sum(x) => {
            let g = dy[0];
            let dx = vec![g; before[x.0].shape.numel()];
            accumulate(before, *x, &dx);
        }
        Op::CrossEntropy { logits, label, probs } => {
            let g = dy[0];
            let dl: Vec<T> = probs
                .iter()
                .enumerate()
                .map(|(i, &p)| if i == *label { (p - T::one()) * g } else { p * g })
                .collect();
            accumulate(before, *logits, &dl);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn leaf64(g: &mut Graph<f64>, data: &[f64], shape: Shape) -> TensorId {
        g.leaf(data.to_vec(), shape, true).unwrap()
    }

    #[test]
    fn matmul_shapes_and_identity() {
        let mut g = Graph::<f64>::new();
        let a = leaf64(&mut g, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], Shape::matrix(2, 3));
        let eye = leaf64(&mut g, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0], Shape::matrix(3, 3));
        let c = g.matmul(a, eye).unwrap();
        assert_eq!(g.value(c), g.value(a));

        let b = leaf64(&mut g, &[1.0; 12], Shape::matrix(3, 4));
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.shape(c).dims(), &[2, 4]);

        let bad = g.matmul(a, a);
        assert!(matches!(bad, Err(TensorError::ShapeMismatch(_))));
    }

    #[test]
    fn softmax_rows_and_magnitude_stability() {
        let mut g = Graph::<f64>::new();
        let x = leaf64(&mut g, &[0.0, (2.0f64).ln()], Shape::vector(2));
        let y = g.softmax_axis(x, 1).unwrap();
        let v = g.value(y);
        assert!((v[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((v[1] - 2.0 / 3.0).abs() < 1e-12);

        let big = leaf64(&mut g, &[1000.0, -1000.0, 999.0, 0.0], Shape::matrix(2, 2));
        let y = g.softmax_axis(big, 1).unwrap();
        assert!(g.value(y).iter().all(|v| v.is_finite()));
        let rows: f64 = g.value(y)[..2].iter().sum();
        assert!((rows - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_column_axis_normalizes_columns() {
        let mut g = Graph::<f64>::new();
        let x = leaf64(&mut g, &[1.0, 5.0, 3.0, -2.0, 0.5, 9.0], Shape::matrix(3, 2));
        let y = g.softmax_axis(x, 0).unwrap();
        let v = g.value(y);
        for j in 0..2 {
            let col: f64 = (0..3).map(|i| v[i * 2 + j]).sum();
            assert!((col - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn l1_normalize_examples() {
        let mut g = Graph::<f64>::new();
        let x = leaf64(&mut g, &[1.0, 3.0], Shape::vector(2));
        let y = g.l1_normalize_axis(x, 1).unwrap();
        let v = g.value(y);
        assert!((v[0] - 0.25).abs() < 1e-9);
        assert!((v[1] - 0.75).abs() < 1e-9);

        // Idempotence within eps tolerance.
        let y2 = g.l1_normalize_axis(y, 1).unwrap();
        for (a, b) in g.value(y2).iter().zip(g.value(y)) {
            assert!((a - b).abs() < 1e-9);
        }

        // All-zero slice becomes uniform.
        let z = leaf64(&mut g, &[0.0, 0.0, 0.0, 0.0], Shape::matrix(1, 4));
        let yz = g.l1_normalize_axis(z, 1).unwrap();
        assert_eq!(g.value(yz), &[0.25, 0.25, 0.25, 0.25]);
    }

    #[test]
    fn layer_norm_constant_vector_maps_to_bias() {
        let mut g = Graph::<f64>::new();
        let x = leaf64(&mut g, &[5.0, 5.0, 5.0, 5.0], Shape::matrix(1, 4));
        let gain = leaf64(&mut g, &[1.0; 4], Shape::vector(4));
        let bias = leaf64(&mut g, &[0.0; 4], Shape::vector(4));
        let y = g.layer_norm(x, gain, bias, 1e-5).unwrap();
        for v in g.value(y) {
            assert!(v.abs() < 1e-9);
        }
    }

    #[test]
    fn layer_norm_standardizes_rows() {
        let mut g = Graph::<f64>::new();
        let x = leaf64(&mut g, &[1.0, 2.0, 3.0, 4.0, -1.0, 0.0, 1.0, 2.0], Shape::matrix(2, 4));
        let gain = leaf64(&mut g, &[1.0; 4], Shape::vector(4));
        let bias = leaf64(&mut g, &[0.0; 4], Shape::vector(4));
        let y = g.layer_norm(x, gain, bias, 1e-12).unwrap();
        for r in 0..2 {
            let row = &g.value(y)[r * 4..(r + 1) * 4];
            let mean: f64 = row.iter().sum::<f64>() / 4.0;
            let var: f64 = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn gelu_fixes_zero_and_is_monotone_nearby() {
        let mut g = Graph::<f64>::new();
        let x = leaf64(&mut g, &[0.0, 1.0, -1.0], Shape::vector(3));
        let y = g.gelu(x).unwrap();
        let v = g.value(y);
        assert_eq!(v[0], 0.0);
        assert!(v[1] > 0.8 && v[1] < 0.9); // gelu(1) ~ 0.8412
        assert!(v[2] < 0.0 && v[2] > -0.2);
    }

    #[test]
    fn concat_and_slice_round_trip() {
        let mut g = Graph::<f64>::new();
        let a = leaf64(&mut g, &[1.0, 2.0, 3.0, 4.0], Shape::matrix(2, 2));
        let b = leaf64(&mut g, &[5.0, 6.0, 7.0, 8.0], Shape::matrix(2, 2));
        let cat = g.concat_cols(&[a, b]).unwrap();
        assert_eq!(g.value(cat), &[1.0, 2.0, 5.0, 6.0, 3.0, 4.0, 7.0, 8.0]);
        let back = g.slice_cols(cat, 2, 2).unwrap();
        assert_eq!(g.value(back), g.value(b));

        let catr = g.concat_rows(&[a, b]).unwrap();
        assert_eq!(g.value(catr), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        let backr = g.slice_rows(catr, 0, 2).unwrap();
        assert_eq!(g.value(backr), g.value(a));
    }

    #[test]
    fn cross_entropy_matches_closed_form_and_bounds() {
        let mut g = Graph::<f64>::new();
        // Uniform logits over 10 classes -> ln 10.
        let x = leaf64(&mut g, &[0.0; 10], Shape::vector(10));
        let l = g.cross_entropy(x, 3).unwrap();
        assert!((g.value(l)[0] - 10.0f64.ln()).abs() < 1e-12);

        // Strongly correct logit -> loss near zero.
        let mut hot = vec![0.0; 10];
        hot[7] = 1000.0;
        let x = leaf64(&mut g, &hot, Shape::vector(10));
        let l = g.cross_entropy(x, 7).unwrap();
        assert!(g.value(l)[0].abs() < 1e-9);

        let bad = g.cross_entropy(x, 10);
        assert!(matches!(bad, Err(TensorError::LabelOutOfRange { .. })));
    }

    #[test]
    fn backward_of_sum_is_ones_and_of_square_is_two_x() {
        let mut g = Graph::<f64>::new();
        let x = leaf64(&mut g, &[1.0, -2.0, 3.0], Shape::vector(3));
        let s = g.sum(x).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0, 1.0, 1.0]);

        let mut g = Graph::<f64>::new();
        let x = leaf64(&mut g, &[1.0, -2.0, 3.0], Shape::vector(3));
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0, -4.0, 6.0]);
    }

    #[test]
    fn backward_twice_is_stale_and_nonscalar_rejected() {
        let mut g = Graph::<f64>::new();
        let x = leaf64(&mut g, &[1.0, 2.0], Shape::vector(2));
        let s = g.sum(x).unwrap();
        assert!(matches!(g.backward(x), Err(TensorError::NonScalarLoss(2))));
        g.backward(s).unwrap();
        assert_eq!(g.backward(s), Err(TensorError::StaleGraph));
    }

    #[test]
    fn shared_leaves_do_not_copy_and_still_get_grads() {
        let data = std::sync::Arc::new(vec![2.0f64, 4.0]);
        let mut g = Graph::<f64>::new();
        let x = g.leaf_shared(Arc::clone(&data), Shape::vector(2), true).unwrap();
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[4.0, 8.0]);
        drop(g);
        assert_eq!(Arc::strong_count(&data), 1);
    }

    #[test]
    fn unknown_axis_and_foreign_ids_error() {
        let mut g = Graph::<f64>::new();
        let x = leaf64(&mut g, &[1.0, 2.0], Shape::vector(2));
        assert!(matches!(
            g.softmax_axis(x, 2),
            Err(TensorError::InvalidAxis { axis: 2, .. })
        ));
        assert!(matches!(
            g.sum(TensorId(99)),
            Err(TensorError::UnknownTensor(99))
        ));
    }
}
