use std::borrow::Cow;

use super::kernels::{self, ConvGeom};
use super::{shape_err, Precision, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
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
    AddBias(Var, Var),
    Scale(Var, f64),
    ScaleBy(Var, Var),
    Transpose(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Gelu(Var),
    ConcatLast(Vec<Var>),
    ConcatRows(Vec<Var>),
    NarrowCols {
        x: Var,
        start: usize,
    },
    GatherRows {
        x: Var,
        index: Vec<usize>,
    },
    Reshape(Var),
    MeanAxis {
        x: Var,
        axis: usize,
    },
    RepeatAxis {
        x: Var,
        axis: usize,
    },
    Conv {
        x: Var,
        kernel: Var,
        bias: Var,
        geom: ConvGeom,
    },
    Resize {
        x: Var,
        taps: Vec<(usize, usize, f64, f64)>,
    },
    Sum(Var),
    CrossEntropy {
        logits: Var,
        probs: Vec<f64>,
        class: usize,
    },
}

struct Node<'p> {
    value: Cow<'p, Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Record of executed primitives. Values of parameters registered with
/// [`Tape::param`] are borrowed, not copied.
pub struct Tape<'p> {
    nodes: Vec<Node<'p>>,
    precision: Precision,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// `None` when the value does not influence the loss through a
    /// differentiable path.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

// (rows, cols) of a tensor viewed over its last axis.
fn rc(t: &Tensor) -> (usize, usize) {
    t.rows_cols()
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Self::with_precision(Precision::F64)
    }

    pub fn with_precision(precision: Precision) -> Self {
        Self {
            nodes: Vec::new(),
            precision,
        }
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

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Registers a borrowed trainable value.
    pub fn param(&mut self, t: &'p Tensor) -> Var {
        let value = match self.precision {
            Precision::F64 => Cow::Borrowed(t),
            Precision::F32 => {
                let mut owned = t.clone();
                owned.round_to_f32();
                Cow::Owned(owned)
            }
        };
        self.push_node(value, Op::Leaf, true)
    }

    pub fn leaf(&mut self, mut t: Tensor, requires_grad: bool) -> Var {
        if self.precision == Precision::F32 {
            t.round_to_f32();
        }
        self.push_node(Cow::Owned(t), Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.leaf(t, false)
    }

    /// Copies the value into a new constant leaf, cutting gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    fn push_node(&mut self, value: Cow<'p, Tensor>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, mut value: Tensor, op: Op, inputs: &[Var]) -> Result<Var, TensorError> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        if self.precision == Precision::F32 {
            value.round_to_f32();
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push_node(Cow::Owned(value), op, requires_grad))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    fn matrix(&self, op: &'static str, v: Var) -> Result<(usize, usize), TensorError> {
        match self.shape(v) {
            &[r, c] => Ok((r, c)),
            s => Err(shape_err(op, format!("expected a matrix, got shape {s:?}"))),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (m, k) = self.matrix("matmul", a)?;
        let (k2, n) = self.matrix("matmul", b)?;
        if k != k2 {
            return Err(shape_err("matmul", format!("inner extents {k} and {k2} differ")));
        }
        let data = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        let out = Tensor::new(vec![m, n], data)?;
        self.push("matmul", out, Op::MatMul(a, b), &[a, b])
    }

    fn zip_with(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var, TensorError> {
        self.same_shape(name, a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(name, out, op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_with("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_with("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_with("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a length-`cols` bias to every row.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, TensorError> {
        let (_, cols) = rc(self.value(x));
        if self.shape(bias) != [cols] {
            return Err(shape_err("add_bias", format!("bias {:?} for rows of {cols}", self.shape(bias))));
        }
        let b = self.value(bias).data();
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_mut(cols) {
            for (v, bv) in row.iter_mut().zip(b) {
                *v += bv;
            }
        }
        self.push("add_bias", out, Op::AddBias(x, bias), &[x, bias])
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var, TensorError> {
        let out = self.value(x).map(|v| v * factor);
        self.push("scale", out, Op::Scale(x, factor), &[x])
    }

    /// Multiplies by a single-element tensor, differentiable in both arguments.
    pub fn scale_by(&mut self, x: Var, s: Var) -> Result<Var, TensorError> {
        if self.value(s).numel() != 1 {
            return Err(shape_err("scale_by", format!("scalar expected, got {:?}", self.shape(s))));
        }
        let factor = self.value(s).item();
        let out = self.value(x).map(|v| v * factor);
        self.push("scale_by", out, Op::ScaleBy(x, s), &[x, s])
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var, TensorError> {
        let (r, c) = self.matrix("transpose", x)?;
        let src = self.value(x).data();
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = src[i * c + j];
            }
        }
        let out = Tensor::new(vec![c, r], data)?;
        self.push("transpose", out, Op::Transpose(x), &[x])
    }

    /// Softmax over the last axis, stabilized by subtracting the row maximum.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var, TensorError> {
        let t = self.value(x);
        if !t.is_finite() {
            return Err(TensorError::NonFinite { op: "softmax_rows" });
        }
        let (_, cols) = rc(t);
        let mut out = t.clone();
        for row in out.data_mut().chunks_mut(cols) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        self.push("softmax_rows", out, Op::SoftmaxRows(x), &[x])
    }

    /// Normalizes over the last axis, then applies `gamma * x̂ + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var, TensorError> {
        if eps <= 0.0 || !eps.is_finite() {
            return Err(TensorError::Config {
                op: "layer_norm",
                detail: format!("eps must be positive, got {eps}"),
            });
        }
        let (rows, cols) = rc(self.value(x));
        if self.shape(gamma) != [cols] || self.shape(beta) != [cols] {
            return Err(shape_err("layer_norm", format!("parameters must have length {cols}")));
        }
        let src = self.value(x).data();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![0.0; rows * cols];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = &src[r * cols..(r + 1) * cols];
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for c in 0..cols {
                let xh = (row[c] - mean) * is;
                xhat[r * cols + c] = xh;
                out[r * cols + c] = g[c] * xh + b[c];
            }
        }
        let out = Tensor::new(self.value(x).shape().to_vec(), out)?;
        let op = Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
        };
        self.push("layer_norm", out, op, &[x, gamma, beta])
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Result<Var, TensorError> {
        let out = self.value(x).map(gelu);
        self.push("gelu", out, Op::Gelu(x), &[x])
    }

    /// Concatenates matrices with equal row counts along the column axis.
    pub fn concat_last(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = *parts.first().ok_or_else(|| shape_err("concat_last", "no inputs"))?;
        let (rows, _) = self.matrix("concat_last", first)?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.matrix("concat_last", p)?;
            if r != rows {
                return Err(shape_err("concat_last", format!("row counts {rows} and {r} differ")));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let out = Tensor::new(vec![rows, total], data)?;
        self.push("concat_last", out, Op::ConcatLast(parts.to_vec()), parts)
    }

    /// Stacks matrices with equal column counts along the row axis.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = *parts.first().ok_or_else(|| shape_err("concat_rows", "no inputs"))?;
        let (_, cols) = self.matrix("concat_rows", first)?;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (r, c) = self.matrix("concat_rows", p)?;
            if c != cols {
                return Err(shape_err("concat_rows", format!("column counts {cols} and {c} differ")));
            }
            rows += r;
            data.extend_from_slice(self.value(p).data());
        }
        let out = Tensor::new(vec![rows, cols], data)?;
        self.push("concat_rows", out, Op::ConcatRows(parts.to_vec()), parts)
    }

    /// Columns `start..start + len` of a matrix.
    pub fn narrow_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let (rows, cols) = self.matrix("narrow_cols", x)?;
        if len == 0 || start + len > cols {
            return Err(shape_err("narrow_cols", format!("columns {start}..{} of {cols}", start + len)));
        }
        let src = self.value(x).data();
        let data = (0..rows)
            .flat_map(|r| src[r * cols + start..r * cols + start + len].iter().copied())
            .collect();
        let out = Tensor::new(vec![rows, len], data)?;
        self.push("narrow_cols", out, Op::NarrowCols { x, start }, &[x])
    }

    /// Selects rows of a matrix; indices may repeat.
    pub fn gather_rows(&mut self, x: Var, index: &[usize]) -> Result<Var, TensorError> {
        let (rows, cols) = self.matrix("gather_rows", x)?;
        if index.is_empty() || index.iter().any(|&i| i >= rows) {
            return Err(shape_err("gather_rows", format!("index out of range for {rows} rows")));
        }
        let src = self.value(x).data();
        let data = index
            .iter()
            .flat_map(|&i| src[i * cols..(i + 1) * cols].iter().copied())
            .collect();
        let out = Tensor::new(vec![index.len(), cols], data)?;
        let op = Op::GatherRows {
            x,
            index: index.to_vec(),
        };
        self.push("gather_rows", out, op, &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let out = self.value(x).reshape(shape)?;
        self.push("reshape", out, Op::Reshape(x), &[x])
    }

    /// Mean over one axis; the axis is removed from the shape.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var, TensorError> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(shape_err("mean_axis", format!("axis {axis} for rank {}", shape.len())));
        }
        let (outer, n, inner) = axis_split(&shape, axis);
        let src = self.value(x).data();
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for a in 0..n {
                let base = (o * n + a) * inner;
                for i in 0..inner {
                    data[o * inner + i] += src[base + i];
                }
            }
        }
        for v in &mut data {
            *v /= n as f64;
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let out = Tensor::new(out_shape, data)?;
        self.push("mean_axis", out, Op::MeanAxis { x, axis }, &[x])
    }

    /// Inserts a new axis at `axis` by repeating the input `n` times.
    pub fn repeat_axis(&mut self, x: Var, axis: usize, n: usize) -> Result<Var, TensorError> {
        let shape = self.shape(x).to_vec();
        if axis > shape.len() || n == 0 {
            return Err(shape_err("repeat_axis", format!("axis {axis}, count {n} for rank {}", shape.len())));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis..].iter().product();
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * n * inner);
        for o in 0..outer {
            for _ in 0..n {
                data.extend_from_slice(&src[o * inner..(o + 1) * inner]);
            }
        }
        let mut out_shape = shape;
        out_shape.insert(axis, n);
        let out = Tensor::new(out_shape, data)?;
        self.push("repeat_axis", out, Op::RepeatAxis { x, axis }, &[x])
    }

    /// Temporal convolution whose kernel spans the whole spatial axis.
    ///
    /// `x` is `T×P` or `T×P×C`; `kernel` is `D×P×P` or `D×P×P×C`; the result is
    /// `L×D` with `L = ceil((T + 2·padding − P + 1) / stride)`. Zero padding is
    /// applied on the temporal axis only.
    pub fn conv2d(&mut self, x: Var, kernel: Var, bias: Var, stride: usize, padding: usize) -> Result<Var, TensorError> {
        let (frames, width, channels) = match self.shape(x) {
            &[t, p] => (t, p, 1),
            &[t, p, c] => (t, p, c),
            s => return Err(shape_err("conv2d", format!("input shape {s:?}"))),
        };
        let (out_channels, window) = match self.shape(kernel) {
            &[d, u, q] if channels == 1 && self.rank(x) == 2 => {
                if q != width {
                    return Err(shape_err("conv2d", format!("kernel width {q} vs input width {width}")));
                }
                (d, u)
            }
            &[d, u, q, c] => {
                if q != width || c != channels {
                    return Err(shape_err("conv2d", format!("kernel {:?} vs input {:?}", self.shape(kernel), self.shape(x))));
                }
                (d, u)
            }
            s => return Err(shape_err("conv2d", format!("kernel shape {s:?}"))),
        };
        if window != width {
            return Err(shape_err("conv2d", format!("kernel must be square: {window}×{width}")));
        }
        if self.shape(bias) != [out_channels] {
            return Err(shape_err("conv2d", format!("bias {:?} for {out_channels} channels", self.shape(bias))));
        }
        let steps = kernels::conv_output_len(frames, window, stride, padding).ok_or_else(|| TensorError::Config {
            op: "conv2d",
            detail: format!("no output steps for T={frames}, P={window}, stride={stride}, padding={padding}"),
        })?;
        let geom = ConvGeom {
            frames,
            width,
            channels,
            out_channels,
            window,
            stride,
            padding,
            steps,
        };
        let data = kernels::conv_forward(&geom, self.value(x).data(), self.value(kernel).data(), self.value(bias).data());
        let out = Tensor::new(vec![steps, out_channels], data)?;
        self.push("conv2d", out, Op::Conv { x, kernel, bias, geom }, &[x, kernel, bias])
    }

    fn rank(&self, v: Var) -> usize {
        self.value(v).rank()
    }

    /// Align-corners linear resize of axis 1 of a `T×J` or `T×J×C` tensor to `target`.
    pub fn resize(&mut self, x: Var, target: usize) -> Result<Var, TensorError> {
        let shape = self.shape(x).to_vec();
        let (frames, joints, channels) = match shape[..] {
            [t, j] => (t, j, 1),
            [t, j, c] => (t, j, c),
            _ => return Err(shape_err("resize", format!("input shape {shape:?}"))),
        };
        if target == 0 {
            return Err(shape_err("resize", "target size must be positive"));
        }
        let taps = kernels::resize_taps(joints, target);
        let src = self.value(x).data();
        let mut data = vec![0.0; frames * target * channels];
        for t in 0..frames {
            for (i, &(lo, hi, wl, wh)) in taps.iter().enumerate() {
                for c in 0..channels {
                    let a = src[(t * joints + lo) * channels + c];
                    let b = src[(t * joints + hi) * channels + c];
                    data[(t * target + i) * channels + c] = if wh == 0.0 { a } else { wl * a + wh * b };
                }
            }
        }
        let mut out_shape = shape;
        out_shape[1] = target;
        let out = Tensor::new(out_shape, data)?;
        self.push("resize", out, Op::Resize { x, taps }, &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, TensorError> {
        let out = Tensor::scalar(self.value(x).sum());
        self.push("sum", out, Op::Sum(x), &[x])
    }

    /// Negative log-likelihood of `class` under softmax of a logit vector.
    pub fn cross_entropy(&mut self, logits: Var, class: usize) -> Result<Var, TensorError> {
        let z = self.value(logits).data();
        if class >= z.len() {
            return Err(shape_err("cross_entropy", format!("class {class} for {} logits", z.len())));
        }
        if !self.value(logits).is_finite() {
            return Err(TensorError::NonFinite { op: "cross_entropy" });
        }
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let loss = total.ln() + max - z[class];
        let probs = exps.iter().map(|e| e / total).collect();
        let op = Op::CrossEntropy { logits, probs, class };
        self.push("cross_entropy", Tensor::scalar(loss), op, &[logits])
    }

    /// Reverse pass from a scalar loss. Nodes are visited in exact reverse
    /// execution order.
    pub fn backward(&self, loss: Var) -> Result<Gradients, TensorError> {
        let node = self
            .nodes
            .get(loss.0)
            .ok_or_else(|| TensorError::Usage(format!("unknown variable {}", loss.0)))?;
        if node.value.numel() != 1 {
            return Err(TensorError::Usage(format!("loss must be scalar, got shape {:?}", node.value.shape())));
        }
        if !node.requires_grad {
            return Err(TensorError::Usage("loss does not depend on any value that requires grad".into()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(node.value.shape(), 1.0));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(dy) = grads[i].take() else { continue };
            self.backprop_node(i, &dy, &mut grads);
            grads[i] = Some(dy);
        }
        Ok(Gradients { grads })
    }

    fn accum(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        debug_assert_eq!(g.shape(), self.nodes[v.0].value.shape());
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn grad_like(&self, v: Var, data: Vec<f64>) -> Tensor {
        Tensor::new(self.shape(v).to_vec(), data).expect("gradient shape matches its value")
    }

    fn backprop_node(&self, i: usize, dy: &Tensor, grads: &mut [Option<Tensor>]) {
        let out = &self.nodes[i].value;
        let g = dy.data();
        match &self.nodes[i].op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (m, k) = (self.shape(a)[0], self.shape(a)[1]);
                let n = self.shape(b)[1];
                if self.requires_grad(a) {
                    let da = kernels::matmul_bt(g, self.value(b).data(), m, n, k);
                    self.accum(grads, a, self.grad_like(a, da));
                }
                if self.requires_grad(b) {
                    let db = kernels::matmul_at(self.value(a).data(), g, m, k, n);
                    self.accum(grads, b, self.grad_like(b, db));
                }
            }
            &Op::Add(a, b) => {
                self.accum(grads, a, dy.clone());
                self.accum(grads, b, dy.clone());
            }
            &Op::Sub(a, b) => {
                self.accum(grads, a, dy.clone());
                self.accum(grads, b, dy.map(|v| -v));
            }
            &Op::Mul(a, b) => {
                if self.requires_grad(a) {
                    let d = g.iter().zip(self.value(b).data()).map(|(x, y)| x * y).collect();
                    self.accum(grads, a, self.grad_like(a, d));
                }
                if self.requires_grad(b) {
                    let d = g.iter().zip(self.value(a).data()).map(|(x, y)| x * y).collect();
                    self.accum(grads, b, self.grad_like(b, d));
                }
            }
            &Op::AddBias(x, bias) => {
                self.accum(grads, x, dy.clone());
                if self.requires_grad(bias) {
                    let (_, cols) = rc(dy);
                    let mut db = vec![0.0; cols];
                    for row in g.chunks(cols) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    self.accum(grads, bias, self.grad_like(bias, db));
                }
            }
            &Op::Scale(x, factor) => self.accum(grads, x, dy.map(|v| v * factor)),
            &Op::ScaleBy(x, s) => {
                let factor = self.value(s).item();
                self.accum(grads, x, dy.map(|v| v * factor));
                if self.requires_grad(s) {
                    let ds: f64 = g.iter().zip(self.value(x).data()).map(|(a, b)| a * b).sum();
                    self.accum(grads, s, self.grad_like(s, vec![ds]));
                }
            }
            &Op::Transpose(x) => {
                let (r, c) = (self.shape(x)[0], self.shape(x)[1]);
                let mut d = vec![0.0; r * c];
                for a in 0..r {
                    for b in 0..c {
                        d[a * c + b] = g[b * r + a];
                    }
                }
                self.accum(grads, x, self.grad_like(x, d));
            }
            &Op::SoftmaxRows(x) => {
                let (_, cols) = rc(out);
                let y = out.data();
                let mut d = vec![0.0; y.len()];
                for ((dr, yr), gr) in d.chunks_mut(cols).zip(y.chunks(cols)).zip(g.chunks(cols)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for c in 0..cols {
                        dr[c] = yr[c] * (gr[c] - dot);
                    }
                }
                self.accum(grads, x, self.grad_like(x, d));
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (rows, cols) = rc(out);
                let gm = self.value(*gamma).data();
                if self.requires_grad(*x) {
                    let mut d = vec![0.0; rows * cols];
                    for r in 0..rows {
                        let gr = &g[r * cols..(r + 1) * cols];
                        let xr = &xhat[r * cols..(r + 1) * cols];
                        let dxhat: Vec<f64> = gr.iter().zip(gm).map(|(a, b)| a * b).collect();
                        let mean_d = dxhat.iter().sum::<f64>() / cols as f64;
                        let mean_dx = dxhat.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>() / cols as f64;
                        for c in 0..cols {
                            d[r * cols + c] = inv_std[r] * (dxhat[c] - mean_d - xr[c] * mean_dx);
                        }
                    }
                    self.accum(grads, *x, self.grad_like(*x, d));
                }
                if self.requires_grad(*gamma) {
                    let mut dg = vec![0.0; cols];
                    for (gr, xr) in g.chunks(cols).zip(xhat.chunks(cols)) {
                        for c in 0..cols {
                            dg[c] += gr[c] * xr[c];
                        }
                    }
                    self.accum(grads, *gamma, self.grad_like(*gamma, dg));
                }
                if self.requires_grad(*beta) {
                    let mut db = vec![0.0; cols];
                    for gr in g.chunks(cols) {
                        for c in 0..cols {
                            db[c] += gr[c];
                        }
                    }
                    self.accum(grads, *beta, self.grad_like(*beta, db));
                }
            }
            &Op::Gelu(x) => {
                let d = g.iter().zip(self.value(x).data()).map(|(a, &v)| a * gelu_grad(v)).collect();
                self.accum(grads, x, self.grad_like(x, d));
            }
            Op::ConcatLast(parts) => {
                let (rows, total) = rc(out);
                let mut offset = 0;
                for &p in parts {
                    let w = self.shape(p)[1];
                    if self.requires_grad(p) {
                        let d = (0..rows)
                            .flat_map(|r| g[r * total + offset..r * total + offset + w].iter().copied())
                            .collect();
                        self.accum(grads, p, self.grad_like(p, d));
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).numel();
                    if self.requires_grad(p) {
                        self.accum(grads, p, self.grad_like(p, g[offset..offset + n].to_vec()));
                    }
                    offset += n;
                }
            }
            &Op::NarrowCols { x, start } => {
                let (rows, cols) = (self.shape(x)[0], self.shape(x)[1]);
                let len = out.shape()[1];
                let mut d = vec![0.0; rows * cols];
                for r in 0..rows {
                    d[r * cols + start..r * cols + start + len].copy_from_slice(&g[r * len..(r + 1) * len]);
                }
                self.accum(grads, x, self.grad_like(x, d));
            }
            Op::GatherRows { x, index } => {
                let cols = self.shape(*x)[1];
                let mut d = vec![0.0; self.value(*x).numel()];
                for (k, &src) in index.iter().enumerate() {
                    for c in 0..cols {
                        d[src * cols + c] += g[k * cols + c];
                    }
                }
                self.accum(grads, *x, self.grad_like(*x, d));
            }
            &Op::Reshape(x) => self.accum(grads, x, self.grad_like(x, g.to_vec())),
            &Op::MeanAxis { x, axis } => {
                let (outer, n, inner) = axis_split(self.shape(x), axis);
                let mut d = vec![0.0; outer * n * inner];
                for o in 0..outer {
                    for a in 0..n {
                        for k in 0..inner {
                            d[(o * n + a) * inner + k] = g[o * inner + k] / n as f64;
                        }
                    }
                }
                self.accum(grads, x, self.grad_like(x, d));
            }
            &Op::RepeatAxis { x, axis } => {
                let (outer, n, inner) = axis_split(out.shape(), axis);
                let mut d = vec![0.0; outer * inner];
                for o in 0..outer {
                    for a in 0..n {
                        for k in 0..inner {
                            d[o * inner + k] += g[(o * n + a) * inner + k];
                        }
                    }
                }
                self.accum(grads, x, self.grad_like(x, d));
            }
            &Op::Conv { x, kernel, bias, geom } => {
                let (dx, dk, db) = kernels::conv_backward(&geom, self.value(x).data(), self.value(kernel).data(), g);
                self.accum(grads, x, self.grad_like(x, dx));
                self.accum(grads, kernel, self.grad_like(kernel, dk));
                self.accum(grads, bias, self.grad_like(bias, db));
            }
            Op::Resize { x, taps } => {
                let shape = self.shape(*x);
                let (frames, joints) = (shape[0], shape[1]);
                let channels = shape.get(2).copied().unwrap_or(1);
                let target = taps.len();
                let mut d = vec![0.0; frames * joints * channels];
                for t in 0..frames {
                    for (k, &(lo, hi, wl, wh)) in taps.iter().enumerate() {
                        for c in 0..channels {
                            let gv = g[(t * target + k) * channels + c];
                            d[(t * joints + lo) * channels + c] += wl * gv;
                            d[(t * joints + hi) * channels + c] += wh * gv;
                        }
                    }
                }
                self.accum(grads, *x, self.grad_like(*x, d));
            }
            &Op::Sum(x) => {
                let gv = g[0];
                let t = Tensor::full(self.shape(x), gv);
                self.accum(grads, x, t);
            }
            Op::CrossEntropy { logits, probs, class } => {
                let gv = g[0];
                let mut d: Vec<f64> = probs.iter().map(|p| p * gv).collect();
                d[*class] -= gv;
                self.accum(grads, *logits, self.grad_like(*logits, d));
            }
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let th = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du
}
