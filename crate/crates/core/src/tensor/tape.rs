use super::kernels::{conv1d_forward, matmul_nn, matmul_nt, matmul_tn, tap_offset};
use super::{Result, Tensor, TensorError};

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
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    SoftmaxRows(Var),
    LogClamp(Var, f64),
    Sum(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Conv1d {
        x: Var,
        kernel: Var,
        dilation: usize,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Linear record of forward operations, replayed in reverse by
/// [`Tape::backward`].
///
/// A tape supports exactly one backward pass. Gradients are retained for
/// leaves only; intermediate gradients are released as soon as they have
/// been propagated.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    spent: bool,
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

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last backward pass with respect to leaf `v`, if `v`
    /// influenced the loss.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Tensor, inputs: &[Var], op: Op) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(value, requires_grad, op)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        Ok(())
    }

    fn zip_map(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor {
            shape: va.shape().to_vec(),
            data,
        };
        self.push_op(value, &[a, b], op)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2("matmul")?;
        let (k2, p) = self.value(b).dims2("matmul")?;
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: vec![m, k],
                rhs: vec![k2, p],
            });
        }
        let data = matmul_nn(self.value(a).data(), self.value(b).data(), m, k, p);
        let value = Tensor {
            shape: vec![m, p],
            data,
        };
        Ok(self.push_op(value, &[a, b], Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.value(a).dims2("transpose")?;
        let src = self.value(a).data();
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = src[i * c + j];
            }
        }
        let value = Tensor {
            shape: vec![c, r],
            data,
        };
        Ok(self.push_op(value, &[a], Op::Transpose(a)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip_map(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip_map(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip_map(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    /// Adds a length-`C` vector to every row of an `R×C` matrix.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (r, c) = self.value(x).dims2("add_row")?;
        if self.value(bias).len() != c {
            return Err(TensorError::ShapeMismatch {
                op: "add_row",
                lhs: vec![r, c],
                rhs: self.value(bias).shape().to_vec(),
            });
        }
        let b = self.value(bias).data();
        let data = self
            .value(x)
            .data()
            .chunks_exact(c)
            .flat_map(|row| row.iter().zip(b).map(|(v, bv)| v + bv))
            .collect();
        let value = Tensor {
            shape: vec![r, c],
            data,
        };
        Ok(self.push_op(value, &[x, bias], Op::AddRow(x, bias)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a).map(|v| v * factor);
        self.push_op(value, &[a], Op::Scale(a, factor))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| v.max(0.0));
        self.push_op(value, &[a], Op::Relu(a))
    }

    /// Row-wise softmax, stabilized by subtracting each row's maximum.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.value(a).dims2("softmax_rows")?;
        if !self.value(a).is_finite() {
            return Err(TensorError::NonFinite { op: "softmax_rows" });
        }
        let mut data = self.value(a).data().to_vec();
        for row in data.chunks_exact_mut(c) {
            softmax_in_place(row);
        }
        let value = Tensor {
            shape: vec![r, c],
            data,
        };
        Ok(self.push_op(value, &[a], Op::SoftmaxRows(a)))
    }

    /// `ln(max(a, eps))`; the gradient is zero where the clamp is active.
    pub fn log_clamped(&mut self, a: Var, eps: f64) -> Var {
        let value = self.value(a).map(|v| v.max(eps).ln());
        self.push_op(value, &[a], Op::LogClamp(a, eps))
    }

    /// Sum of all elements as a rank-0 tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        self.push_op(value, &[a], Op::Sum(a))
    }

    /// Per-row standardization followed by an affine map.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (t, d) = self.value(x).dims2("layer_norm")?;
        for p in [gain, bias] {
            if self.value(p).len() != d {
                return Err(TensorError::ShapeMismatch {
                    op: "layer_norm",
                    lhs: vec![t, d],
                    rhs: self.value(p).shape().to_vec(),
                });
            }
        }
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let mut xhat = Vec::with_capacity(t * d);
        let mut inv_std = Vec::with_capacity(t);
        let mut out = Vec::with_capacity(t * d);
        for row in self.value(x).data().chunks_exact(d) {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std.push(inv);
            for (i, &v) in row.iter().enumerate() {
                let h = (v - mean) * inv;
                xhat.push(h);
                out.push(h * g[i] + b[i]);
            }
        }
        let value = Tensor {
            shape: vec![t, d],
            data: out,
        };
        let op = Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            inv_std,
        };
        Ok(self.push_op(value, &[x, gain, bias], op))
    }

    /// Same-length dilated convolution of `x[T×Cin]` with
    /// `kernel[k×Cin×Cout]`, zero padded at both ends.
    pub fn conv1d(&mut self, x: Var, kernel: Var, dilation: usize) -> Result<Var> {
        let (t, cin) = self.value(x).dims2("conv1d")?;
        let (k, kin, cout) = match self.value(kernel).shape() {
            &[k, kin, cout] => (k, kin, cout),
            other => {
                return Err(TensorError::Rank {
                    op: "conv1d",
                    expected: 3,
                    got: other.to_vec(),
                })
            }
        };
        if k % 2 == 0 {
            return Err(TensorError::EvenKernel(k));
        }
        if dilation == 0 {
            return Err(TensorError::ZeroDilation);
        }
        if kin != cin {
            return Err(TensorError::ShapeMismatch {
                op: "conv1d",
                lhs: vec![t, cin],
                rhs: vec![k, kin, cout],
            });
        }
        let data = conv1d_forward(
            self.value(x).data(),
            self.value(kernel).data(),
            t,
            cin,
            cout,
            k,
            dilation,
        );
        let value = Tensor {
            shape: vec![t, cout],
            data,
        };
        let op = Op::Conv1d {
            x,
            kernel,
            dilation,
        };
        Ok(self.push_op(value, &[x, kernel], op))
    }

    /// Columns `start..start + len` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.value(x).dims2("slice_cols")?;
        if start + len > c {
            return Err(TensorError::ColumnRange {
                op: "slice_cols",
                start,
                end: start + len,
                cols: c,
            });
        }
        let data = self
            .value(x)
            .data()
            .chunks_exact(c)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let value = Tensor {
            shape: vec![r, len],
            data,
        };
        Ok(self.push_op(value, &[x], Op::SliceCols { x, start }))
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(TensorError::Rank {
                op: "concat_cols",
                expected: 2,
                got: Vec::new(),
            });
        };
        let (r, _) = self.value(first).dims2("concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pr, pc) = self.value(p).dims2("concat_cols")?;
            if pr != r {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_cols",
                    lhs: self.value(first).shape().to_vec(),
                    rhs: vec![pr, pc],
                });
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(r * total);
        for row in 0..r {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[row * w..(row + 1) * w]);
            }
        }
        let value = Tensor {
            shape: vec![r, total],
            data,
        };
        Ok(self.push_op(value, parts, Op::ConcatCols(parts.to_vec())))
    }

    /// Reverse pass from a scalar `loss`.
    ///
    /// Gradients accumulate additively when a value feeds several
    /// consumers. The tape can be backpropagated only once.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.spent {
            return Err(TensorError::AlreadyBackpropagated);
        }
        let root = &self.nodes[loss.0];
        if !root.value.is_scalar() {
            return Err(TensorError::NonScalarLoss(root.value.shape().to_vec()));
        }
        if !root.requires_grad {
            return Err(TensorError::Detached);
        }
        self.spent = true;

        let nodes = &self.nodes;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            propagate(nodes, &mut grads, node, &g);
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
            }
        }

        self.grads = grads
            .into_iter()
            .zip(nodes)
            .map(|(g, n)| {
                g.map(|data| Tensor {
                    shape: n.value.shape().to_vec(),
                    data,
                })
            })
            .collect();
        Ok(())
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
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

/// Adds `contribution` into the gradient slot of `target` if it needs one.
fn accumulate(
    nodes: &[Node],
    grads: &mut [Option<Vec<f64>>],
    target: Var,
    fill: impl FnOnce(&mut [f64]),
) {
    let node = &nodes[target.0];
    if !node.requires_grad {
        return;
    }
    let slot = grads[target.0].get_or_insert_with(|| vec![0.0; node.value.len()]);
    fill(slot);
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn propagate(nodes: &[Node], grads: &mut [Option<Vec<f64>>], node: &Node, g: &[f64]) {
    let val = |v: Var| &nodes[v.0].value;
    match &node.op {
        Op::Leaf => {}
        &Op::MatMul(a, b) => {
            let (m, k) = (val(a).rows(), val(a).cols());
            let p = val(b).cols();
            accumulate(nodes, grads, a, |dst| {
                add_into(dst, &matmul_nt(g, val(b).data(), m, p, k));
            });
            accumulate(nodes, grads, b, |dst| {
                add_into(dst, &matmul_tn(val(a).data(), g, m, k, p));
            });
        }
        &Op::Transpose(a) => {
            let (r, c) = (val(a).rows(), val(a).cols());
            accumulate(nodes, grads, a, |dst| {
                for i in 0..r {
                    for j in 0..c {
                        dst[i * c + j] += g[j * r + i];
                    }
                }
            });
        }
        &Op::Add(a, b) => {
            accumulate(nodes, grads, a, |dst| add_into(dst, g));
            accumulate(nodes, grads, b, |dst| add_into(dst, g));
        }
        &Op::Sub(a, b) => {
            accumulate(nodes, grads, a, |dst| add_into(dst, g));
            accumulate(nodes, grads, b, |dst| {
                for (d, s) in dst.iter_mut().zip(g) {
                    *d -= s;
                }
            });
        }
        &Op::Mul(a, b) => {
            accumulate(nodes, grads, a, |dst| {
                for ((d, s), y) in dst.iter_mut().zip(g).zip(val(b).data()) {
                    *d += s * y;
                }
            });
            accumulate(nodes, grads, b, |dst| {
                for ((d, s), x) in dst.iter_mut().zip(g).zip(val(a).data()) {
                    *d += s * x;
                }
            });
        }
        &Op::AddRow(x, bias) => {
            let c = val(x).cols();
            accumulate(nodes, grads, x, |dst| add_into(dst, g));
            accumulate(nodes, grads, bias, |dst| {
                for row in g.chunks_exact(c) {
                    add_into(dst, row);
                }
            });
        }
        &Op::Scale(a, factor) => {
            accumulate(nodes, grads, a, |dst| {
                for (d, s) in dst.iter_mut().zip(g) {
                    *d += s * factor;
                }
            });
        }
        &Op::Relu(a) => {
            accumulate(nodes, grads, a, |dst| {
                for ((d, s), x) in dst.iter_mut().zip(g).zip(val(a).data()) {
                    if *x > 0.0 {
                        *d += s;
                    }
                }
            });
        }
        &Op::SoftmaxRows(a) => {
            let c = val(a).cols();
            let y = node.value.data();
            accumulate(nodes, grads, a, |dst| {
                for ((d_row, g_row), y_row) in dst
                    .chunks_exact_mut(c)
                    .zip(g.chunks_exact(c))
                    .zip(y.chunks_exact(c))
                {
                    let dot: f64 = g_row.iter().zip(y_row).map(|(a, b)| a * b).sum();
                    for ((d, gv), yv) in d_row.iter_mut().zip(g_row).zip(y_row) {
                        *d += yv * (gv - dot);
                    }
                }
            });
        }
        &Op::LogClamp(a, eps) => {
            accumulate(nodes, grads, a, |dst| {
                for ((d, s), x) in dst.iter_mut().zip(g).zip(val(a).data()) {
                    if *x > eps {
                        *d += s / x;
                    }
                }
            });
        }
        &Op::Sum(a) => {
            let s = g[0];
            accumulate(nodes, grads, a, |dst| {
                for d in dst.iter_mut() {
                    *d += s;
                }
            });
        }
        Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            inv_std,
        } => {
            let d = val(*x).cols();
            let gain_v = val(*gain).data();
            accumulate(nodes, grads, *gain, |dst| {
                for (g_row, h_row) in g.chunks_exact(d).zip(xhat.chunks_exact(d)) {
                    for ((dv, gv), hv) in dst.iter_mut().zip(g_row).zip(h_row) {
                        *dv += gv * hv;
                    }
                }
            });
            accumulate(nodes, grads, *bias, |dst| {
                for g_row in g.chunks_exact(d) {
                    add_into(dst, g_row);
                }
            });
            accumulate(nodes, grads, *x, |dst| {
                let n = d as f64;
                for (((d_row, g_row), h_row), &inv) in dst
                    .chunks_exact_mut(d)
                    .zip(g.chunks_exact(d))
                    .zip(xhat.chunks_exact(d))
                    .zip(inv_std)
                {
                    let mut mean_dh = 0.0;
                    let mut mean_dh_h = 0.0;
                    for i in 0..d {
                        let dh = g_row[i] * gain_v[i];
                        mean_dh += dh;
                        mean_dh_h += dh * h_row[i];
                    }
                    mean_dh /= n;
                    mean_dh_h /= n;
                    for i in 0..d {
                        let dh = g_row[i] * gain_v[i];
                        d_row[i] += inv * (dh - mean_dh - h_row[i] * mean_dh_h);
                    }
                }
            });
        }
        &Op::Conv1d {
            x,
            kernel,
            dilation,
        } => {
            let (t, cin) = (val(x).rows(), val(x).cols());
            let shape = val(kernel).shape();
            let (k, cout) = (shape[0], shape[2]);
            let w = val(kernel).data();
            let xs = val(x).data();
            accumulate(nodes, grads, x, |dst| {
                for j in 0..k {
                    let off = tap_offset(j, k, dilation);
                    let wj = &w[j * cin * cout..(j + 1) * cin * cout];
                    for step in 0..t {
                        let src = step as isize + off;
                        if src < 0 || src >= t as isize {
                            continue;
                        }
                        let src = src as usize;
                        let g_row = &g[step * cout..(step + 1) * cout];
                        let d_row = &mut dst[src * cin..(src + 1) * cin];
                        for (i, dv) in d_row.iter_mut().enumerate() {
                            let w_row = &wj[i * cout..(i + 1) * cout];
                            *dv += g_row.iter().zip(w_row).map(|(a, b)| a * b).sum::<f64>();
                        }
                    }
                }
            });
            accumulate(nodes, grads, kernel, |dst| {
                for j in 0..k {
                    let off = tap_offset(j, k, dilation);
                    let dj = &mut dst[j * cin * cout..(j + 1) * cin * cout];
                    for step in 0..t {
                        let src = step as isize + off;
                        if src < 0 || src >= t as isize {
                            continue;
                        }
                        let src = src as usize;
                        let g_row = &g[step * cout..(step + 1) * cout];
                        for (i, &xv) in xs[src * cin..(src + 1) * cin].iter().enumerate() {
                            if xv == 0.0 {
                                continue;
                            }
                            for (dv, gv) in dj[i * cout..(i + 1) * cout].iter_mut().zip(g_row) {
                                *dv += xv * gv;
                            }
                        }
                    }
                }
            });
        }
        &Op::SliceCols { x, start } => {
            let c = val(x).cols();
            let len = node.value.cols();
            accumulate(nodes, grads, x, |dst| {
                for (d_row, g_row) in dst.chunks_exact_mut(c).zip(g.chunks_exact(len)) {
                    add_into(&mut d_row[start..start + len], g_row);
                }
            });
        }
        Op::ConcatCols(parts) => {
            let total = node.value.cols();
            let mut offset = 0;
            for &p in parts {
                let w = val(p).cols();
                accumulate(nodes, grads, p, |dst| {
                    for (d_row, g_row) in dst.chunks_exact_mut(w).zip(g.chunks_exact(total)) {
                        add_into(d_row, &g_row[offset..offset + w]);
                    }
                });
                offset += w;
            }
        }
    }
}
