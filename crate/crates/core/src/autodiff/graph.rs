//! Computation graph recorded during the forward pass.
//!
//! Nodes are appended in evaluation order, so the node vector is already a
//! topological order and backward is a single reverse sweep.

use super::{ParamId, ParamStore, Tensor, TensorError};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    ConvText {
        x: Var,
        w: Var,
        b: Var,
        region: usize,
    },
    MaxPoolTime {
        x: Var,
        argmax: Vec<usize>,
    },
    Conv1d {
        x: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
        padded_len: usize,
    },
    Concat(Vec<Var>),
    StackRows(Vec<Var>),
    Reshape(Var),
    Transpose(Var),
    SoftmaxXent {
        logits: Var,
        gold: usize,
        probs: Vec<f64>,
    },
}

impl Op {
    fn tag(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Leaf => "leaf",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Scale(..) => "scale",
            Op::Relu(_) => "relu",
            Op::ConvText { .. } => "conv_text",
            Op::MaxPoolTime { .. } => "maxpool_time",
            Op::Conv1d { .. } => "conv1d",
            Op::Concat(_) => "concat",
            Op::StackRows(_) => "stack_rows",
            Op::Reshape(_) => "reshape",
            Op::Transpose(_) => "transpose",
            Op::SoftmaxXent { .. } => "softmax_xent",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn shape_err(op: &'static str, left: &Tensor, right: &Tensor) -> TensorError {
    TensorError::Shape {
        op,
        left: left.shape().to_vec(),
        right: right.shape().to_vec(),
    }
}

fn dense_matmul(a: &[f64], b: &[f64], p: usize, q: usize, s: usize) -> Vec<f64> {
    let mut out = vec![0.0; p * s];
    for i in 0..p {
        let row = &mut out[i * s..(i + 1) * s];
        for k in 0..q {
            let aik = a[i * q + k];
            if aik == 0.0 {
                continue;
            }
            let brow = &b[k * s..(k + 1) * s];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    }
    out
}

fn transpose_data(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Padded input length for a stride-`stride` window of `field` over `n`
/// values: the smallest `n' >= n` with `(n' - field) % stride == 0`.
pub fn conv1d_padded_len(n: usize, field: usize, stride: usize) -> usize {
    let rem = (n - field) % stride;
    if rem == 0 {
        n
    } else {
        n + stride - rem
    }
}

/// Output length of [`Graph::conv1d`] over `n` inputs.
pub fn conv1d_output_len(n: usize, field: usize, stride: usize) -> usize {
    (conv1d_padded_len(n, field, stride) - field) / stride + 1
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Result<Var, TensorError> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: op.tag() });
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A value that gradients do not flow into.
    pub fn constant(&mut self, t: Tensor) -> Result<Var, TensorError> {
        self.push(t, Op::Constant, false)
    }

    /// A differentiable input that is not a parameter.
    pub fn leaf(&mut self, t: Tensor) -> Result<Var, TensorError> {
        self.push(t, Op::Leaf, true)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Result<Var, TensorError> {
        self.push(store.value(id).clone(), Op::Param(id), true)
    }

    /// Copy of `v`'s value with no gradient path back to it.
    pub fn detach(&mut self, v: Var) -> Result<Var, TensorError> {
        let t = self.value(v).clone();
        self.constant(t)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let ((p, q), (q2, s)) = match (ta.dims2(), tb.dims2()) {
            (Some(x), Some(y)) => (x, y),
            _ => return Err(shape_err("matmul", ta, tb)),
        };
        if q != q2 {
            return Err(shape_err("matmul", ta, tb));
        }
        let out = Tensor::matrix(p, s, dense_matmul(ta.data(), tb.data(), p, q, s))?;
        let rg = self.any_grad(&[a, b]);
        self.push(out, Op::MatMul(a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("add", ta, tb));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| x + y)
            .collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.any_grad(&[a, b]);
        self.push(out, Op::Add(a, b), rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var, TensorError> {
        let ta = self.value(a);
        let out = Tensor::new(
            ta.shape().to_vec(),
            ta.data().iter().map(|x| x * c).collect(),
        )?;
        let rg = self.any_grad(&[a]);
        self.push(out, Op::Scale(a, c), rg)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, TensorError> {
        let ta = self.value(a);
        let out = Tensor::new(
            ta.shape().to_vec(),
            ta.data().iter().map(|&x| x.max(0.0)).collect(),
        )?;
        let rg = self.any_grad(&[a]);
        self.push(out, Op::Relu(a), rg)
    }

    /// Full-width convolution of `x` (`n × width`) with `w`
    /// (`filters × region·width`) and bias `b` (`filters`). Output is
    /// `(n − region + 1) × filters`, before any nonlinearity.
    pub fn conv_text(&mut self, x: Var, w: Var, b: Var) -> Result<Var, TensorError> {
        let (tx, tw, tb) = (self.value(x), self.value(w), self.value(b));
        let (Some((n, width)), Some((filters, span))) = (tx.dims2(), tw.dims2()) else {
            return Err(shape_err("conv_text", tx, tw));
        };
        if span % width != 0 {
            return Err(shape_err("conv_text", tx, tw));
        }
        let region = span / width;
        if region > n {
            return Err(shape_err("conv_text", tx, tw));
        }
        if tb.shape() != [filters] {
            return Err(shape_err("conv_text", tw, tb));
        }
        let positions = n - region + 1;
        let mut out = Vec::with_capacity(positions * filters);
        for p in 0..positions {
            let window = &tx.data()[p * width..p * width + span];
            for c in 0..filters {
                out.push(tb.data()[c] + dot(&tw.data()[c * span..(c + 1) * span], window));
            }
        }
        let out = Tensor::matrix(positions, filters, out)?;
        let rg = self.any_grad(&[x, w, b]);
        self.push(out, Op::ConvText { x, w, b, region }, rg)
    }

    /// Per-column maximum of an `n × f` map. Ties pick the first position.
    pub fn maxpool_time(&mut self, x: Var) -> Result<Var, TensorError> {
        let tx = self.value(x);
        let Some((n, f)) = tx.dims2() else {
            return Err(TensorError::Argument(format!(
                "maxpool_time needs a 2-D map, got {:?}",
                tx.shape()
            )));
        };
        let mut argmax = vec![0usize; f];
        let mut out = vec![f64::NEG_INFINITY; f];
        for p in 0..n {
            for c in 0..f {
                let v = tx.data()[p * f + c];
                if v > out[c] {
                    out[c] = v;
                    argmax[c] = p;
                }
            }
        }
        let rg = self.any_grad(&[x]);
        self.push(Tensor::vector(out), Op::MaxPoolTime { x, argmax }, rg)
    }

    /// Single-channel 1-D convolution with `kernel` (`F` taps), scalar
    /// `bias` and `stride`. Inputs whose length does not fit the stride are
    /// right-padded with zeros.
    pub fn conv1d(
        &mut self,
        x: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
    ) -> Result<Var, TensorError> {
        let (tx, tk, tb) = (self.value(x), self.value(kernel), self.value(bias));
        if tx.ndim() != 1 || tk.ndim() != 1 || tk.len() > tx.len() {
            return Err(shape_err("conv1d", tx, tk));
        }
        if tb.shape() != [1] {
            return Err(shape_err("conv1d", tk, tb));
        }
        if stride == 0 {
            return Err(TensorError::Argument(
                "conv1d stride must be positive".into(),
            ));
        }
        let (n, field) = (tx.len(), tk.len());
        let padded_len = conv1d_padded_len(n, field, stride);
        if padded_len != n {
            log::debug!("conv1d: padding input from {n} to {padded_len} for F={field}, S={stride}");
        }
        let outputs = (padded_len - field) / stride + 1;
        let xs = tx.data();
        let bias_v = tb.data()[0];
        let out: Vec<f64> = (0..outputs)
            .map(|o| {
                let start = (o * stride).min(n);
                let end = (start + field).min(n);
                bias_v + dot(&tk.data()[..end - start], &xs[start..end])
            })
            .collect();
        let rg = self.any_grad(&[x, kernel, bias]);
        self.push(
            Tensor::vector(out),
            Op::Conv1d {
                x,
                kernel,
                bias,
                stride,
                padded_len,
            },
            rg,
        )
    }

    /// Concatenates 1-D tensors end to end.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.ndim() != 1 {
                return Err(TensorError::Argument(format!(
                    "concat needs 1-D parts, got {:?}",
                    t.shape()
                )));
            }
            data.extend_from_slice(t.data());
        }
        if data.is_empty() {
            return Err(TensorError::Argument("concat of nothing".into()));
        }
        let rg = self.any_grad(parts);
        self.push(Tensor::vector(data), Op::Concat(parts.to_vec()), rg)
    }

    /// Stacks equal-length 1-D tensors as the rows of a matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var, TensorError> {
        let first = rows
            .first()
            .ok_or_else(|| TensorError::Argument("stack_rows of nothing".into()))?;
        let width = self.value(*first).len();
        let mut data = Vec::with_capacity(width * rows.len());
        for &r in rows {
            let t = self.value(r);
            if t.ndim() != 1 || t.len() != width {
                return Err(shape_err("stack_rows", self.value(*first), t));
            }
            data.extend_from_slice(t.data());
        }
        let out = Tensor::matrix(rows.len(), width, data)?;
        let rg = self.any_grad(rows);
        self.push(out, Op::StackRows(rows.to_vec()), rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let out = self.value(x).reshaped(shape)?;
        let rg = self.any_grad(&[x]);
        self.push(out, Op::Reshape(x), rg)
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var, TensorError> {
        let tx = self.value(x);
        let Some((r, c)) = tx.dims2() else {
            return Err(TensorError::Argument(format!(
                "transpose needs 2-D, got {:?}",
                tx.shape()
            )));
        };
        let out = Tensor::matrix(c, r, transpose_data(tx.data(), r, c))?;
        let rg = self.any_grad(&[x]);
        self.push(out, Op::Transpose(x), rg)
    }

    /// `W·x + b` for a matrix `W` (`o × i`), vector `x` (`i`) and bias `b` (`o`).
    pub fn linear(&mut self, w: Var, x: Var, b: Var) -> Result<Var, TensorError> {
        let n = self.value(x).len();
        let col = self.reshape(x, &[n, 1])?;
        let prod = self.matmul(w, col)?;
        let o = self.value(prod).len();
        let flat = self.reshape(prod, &[o])?;
        self.add(flat, b)
    }

    /// Cross-entropy of softmax(`logits`) against class `gold`. Returns the
    /// scalar loss; probabilities are available via [`Graph::probabilities`].
    pub fn softmax_xent(&mut self, logits: Var, gold: usize) -> Result<Var, TensorError> {
        let tl = self.value(logits);
        if tl.ndim() != 1 || tl.len() < 2 {
            return Err(TensorError::Argument(format!(
                "softmax needs >= 2 logits, got {:?}",
                tl.shape()
            )));
        }
        if gold >= tl.len() {
            return Err(TensorError::Argument(format!(
                "gold class {gold} out of range for {} classes",
                tl.len()
            )));
        }
        let probs = softmax(tl.data());
        let loss = -probs[gold].max(f64::MIN_POSITIVE).ln();
        let rg = self.any_grad(&[logits]);
        self.push(
            Tensor::scalar(loss),
            Op::SoftmaxXent {
                logits,
                gold,
                probs,
            },
            rg,
        )
    }

    /// Softmax probabilities cached by a [`Graph::softmax_xent`] node.
    pub fn probabilities(&self, loss: Var) -> Option<&[f64]> {
        match &self.nodes[loss.0].op {
            Op::SoftmaxXent { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, TensorError> {
        if self.value(loss).len() != 1 {
            return Err(TensorError::Argument(format!(
                "backward needs a scalar loss, got {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::new(self.value(loss).shape().to_vec(), vec![1.0])?);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.requires_grad {
                self.propagate(&node.op, &node.value, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        let params = self
            .nodes
            .iter()
            .enumerate()
            .take(loss.0 + 1)
            .filter_map(|(i, n)| match n.op {
                Op::Param(id) => Some((id, i)),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads, params })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        debug_assert_eq!(g.shape(), self.value(v).shape());
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, op: &Op, out: &Tensor, g: &Tensor, grads: &mut [Option<Tensor>]) {
        match op {
            Op::Constant | Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let ((p, q), (_, s)) = (ta.dims2().unwrap(), tb.dims2().unwrap());
                if self.requires_grad(*a) {
                    let bt = transpose_data(tb.data(), q, s);
                    let da = dense_matmul(g.data(), &bt, p, s, q);
                    self.accumulate(grads, *a, Tensor::matrix(p, q, da).unwrap());
                }
                if self.requires_grad(*b) {
                    let at = transpose_data(ta.data(), p, q);
                    let db = dense_matmul(&at, g.data(), q, p, s);
                    self.accumulate(grads, *b, Tensor::matrix(q, s, db).unwrap());
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Scale(a, c) => {
                let d = g.data().iter().map(|x| x * c).collect();
                self.accumulate(grads, *a, Tensor::new(g.shape().to_vec(), d).unwrap());
            }
            Op::Relu(a) => {
                let d = g
                    .data()
                    .iter()
                    .zip(out.data())
                    .map(|(gv, &o)| if o > 0.0 { *gv } else { 0.0 })
                    .collect();
                self.accumulate(grads, *a, Tensor::new(g.shape().to_vec(), d).unwrap());
            }
            Op::ConvText { x, w, b, region } => {
                let (tx, tw) = (self.value(*x), self.value(*w));
                let (n, width) = tx.dims2().unwrap();
                let (filters, span) = tw.dims2().unwrap();
                let positions = n - region + 1;
                let mut dx = vec![0.0; tx.len()];
                let mut dw = vec![0.0; tw.len()];
                let mut db = vec![0.0; filters];
                for p in 0..positions {
                    let lo = p * width;
                    let window = &tx.data()[lo..lo + span];
                    for c in 0..filters {
                        let gv = g.data()[p * filters + c];
                        if gv == 0.0 {
                            continue;
                        }
                        db[c] += gv;
                        let wrow = &tw.data()[c * span..(c + 1) * span];
                        for ((dwv, xv), (dxv, wv)) in dw[c * span..(c + 1) * span]
                            .iter_mut()
                            .zip(window)
                            .zip(dx[lo..lo + span].iter_mut().zip(wrow))
                        {
                            *dwv += gv * xv;
                            *dxv += gv * wv;
                        }
                    }
                }
                self.accumulate(grads, *x, Tensor::matrix(n, width, dx).unwrap());
                self.accumulate(grads, *w, Tensor::matrix(filters, span, dw).unwrap());
                self.accumulate(grads, *b, Tensor::vector(db));
            }
            Op::MaxPoolTime { x, argmax } => {
                let tx = self.value(*x);
                let (_, f) = tx.dims2().unwrap();
                let mut dx = Tensor::zeros(tx.shape());
                for (c, &p) in argmax.iter().enumerate() {
                    dx.data_mut()[p * f + c] += g.data()[c];
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Conv1d {
                x,
                kernel,
                bias,
                stride,
                padded_len,
            } => {
                let (tx, tk) = (self.value(*x), self.value(*kernel));
                let (n, field) = (tx.len(), tk.len());
                let outputs = (padded_len - field) / stride + 1;
                let mut dx = vec![0.0; n];
                let mut dk = vec![0.0; field];
                let mut db = 0.0;
                for o in 0..outputs {
                    let gv = g.data()[o];
                    db += gv;
                    let start = o * stride;
                    for j in 0..field {
                        let idx = start + j;
                        if idx < n {
                            dk[j] += gv * tx.data()[idx];
                            dx[idx] += gv * tk.data()[j];
                        }
                    }
                }
                self.accumulate(grads, *x, Tensor::vector(dx));
                self.accumulate(grads, *kernel, Tensor::vector(dk));
                self.accumulate(grads, *bias, Tensor::scalar(db));
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    self.accumulate(
                        grads,
                        p,
                        Tensor::vector(g.data()[offset..offset + len].to_vec()),
                    );
                    offset += len;
                }
            }
            Op::StackRows(rows) => {
                let (_, width) = g.dims2().unwrap();
                for (i, &r) in rows.iter().enumerate() {
                    self.accumulate(
                        grads,
                        r,
                        Tensor::vector(g.data()[i * width..(i + 1) * width].to_vec()),
                    );
                }
            }
            Op::Reshape(x) => {
                let shape = self.value(*x).shape().to_vec();
                self.accumulate(grads, *x, g.reshaped(&shape).unwrap());
            }
            Op::Transpose(x) => {
                let (r, c) = g.dims2().unwrap();
                self.accumulate(
                    grads,
                    *x,
                    Tensor::matrix(c, r, transpose_data(g.data(), r, c)).unwrap(),
                );
            }
            Op::SoftmaxXent {
                logits,
                gold,
                probs,
            } => {
                let gv = g.data()[0];
                let d = probs
                    .iter()
                    .enumerate()
                    .map(|(i, &p)| gv * (p - if i == *gold { 1.0 } else { 0.0 }))
                    .collect();
                self.accumulate(grads, *logits, Tensor::vector(d));
            }
        }
    }
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Result of [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(ParamId, usize)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Adds every parameter gradient into the store's accumulators.
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        for &(id, node) in &self.params {
            if let Some(g) = &self.grads[node] {
                store.grad_mut(id).add_assign(g);
            }
        }
    }
}
