use super::{Result, Tensor, TensorError};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug)]
enum Bcast {
    Same,
    Row,
    Scalar,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var, Bcast),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Concat(Vec<Var>),
    SliceCols(Var, usize),
    Relu(Var),
    ClampMin(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Conv2d {
        input: Var,
        kernel: Var,
        pad: (usize, usize),
    },
    Reshape(Var),
    GatherRows(Var, Vec<usize>),
    SmoothL1(Var, Var, f64),
    AbsSum(Var),
    Sum(Var),
    Mean(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records a computation graph and runs reverse-mode differentiation over it.
///
/// Nodes are appended in evaluation order, so the recording order is already a
/// topological order; backward walks it in reverse, visiting each node once.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    backward_done: bool,
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn require_matrix(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(TensorError::InvalidShape {
            op,
            shape: s.to_vec(),
            reason: "expected a matrix".into(),
        }),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn accumulate(slot: &mut Option<Tensor>, contrib: Tensor) {
    match slot {
        Some(existing) => {
            for (a, b) in existing.data_mut().iter_mut().zip(contrib.data()) {
                *a += b;
            }
        }
        None => *slot = Some(contrib),
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable leaf: gradients are tracked for it.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Constant leaf: no gradient flows into it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the last backward root with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn reset_grads(&mut self) {
        self.grads.clear();
        self.backward_done = false;
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    /// Elementwise sum. `b` may also be a `[1, n]` row broadcast over the rows
    /// of an `[m, n]` matrix, or a single element broadcast everywhere.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let bcast = if va.shape() == vb.shape() {
            Bcast::Same
        } else if vb.numel() == 1 {
            Bcast::Scalar
        } else if va.shape().len() == 2
            && vb.shape().len() == 2
            && vb.shape()[0] == 1
            && vb.shape()[1] == va.shape()[1]
        {
            Bcast::Row
        } else {
            return Err(mismatch("add", va, vb));
        };
        let mut out = va.clone();
        match bcast {
            Bcast::Same => {
                for (o, x) in out.data_mut().iter_mut().zip(vb.data()) {
                    *o += x;
                }
            }
            Bcast::Scalar => {
                let s = vb.data()[0];
                for o in out.data_mut() {
                    *o += s;
                }
            }
            Bcast::Row => {
                let n = vb.numel();
                for row in out.data_mut().chunks_mut(n) {
                    for (o, x) in row.iter_mut().zip(vb.data()) {
                        *o += x;
                    }
                }
            }
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b, bcast), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(mismatch("sub", va, vb));
        }
        let mut out = va.clone();
        for (o, x) in out.data_mut().iter_mut().zip(vb.data()) {
            *o -= x;
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(mismatch("mul", va, vb));
        }
        let mut out = va.clone();
        for (o, x) in out.data_mut().iter_mut().zip(vb.data()) {
            *o *= x;
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a).map(|x| x * factor);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, factor), rg)
    }

    /// Concatenates matrices with equal row counts along the column axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| TensorError::InvalidShape {
            op: "concat",
            shape: vec![],
            reason: "no operands".into(),
        })?;
        let (rows, _) = require_matrix("concat", self.value(*first))?;
        let mut total = 0;
        for p in parts {
            let v = self.value(*p);
            let (r, c) = require_matrix("concat", v)?;
            if r != rows {
                return Err(mismatch("concat", self.value(*first), v));
            }
            total += c;
        }
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.value(*p).row(r));
            }
        }
        let rg = parts.iter().any(|p| self.rg(*p));
        let out = Tensor::new(vec![rows, total], data)?;
        Ok(self.push(out, Op::Concat(parts.to_vec()), rg))
    }

    /// Column range `[start, end)` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let va = self.value(a);
        let (rows, cols) = require_matrix("slice_cols", va)?;
        if start >= end || end > cols {
            return Err(TensorError::InvalidShape {
                op: "slice_cols",
                shape: va.shape().to_vec(),
                reason: format!("column range {start}..{end}"),
            });
        }
        let width = end - start;
        let mut data = Vec::with_capacity(rows * width);
        for r in 0..rows {
            data.extend_from_slice(&va.row(r)[start..end]);
        }
        let out = Tensor::new(vec![rows, width], data)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::SliceCols(a, start), rg))
    }

    /// `max(x, 0)`; the subgradient at exactly 0 is 0.
    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        let rg = self.rg(a);
        self.push(out, Op::Relu(a), rg)
    }

    /// `max(x, floor)`; gradient passes only where `x > floor`.
    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Var {
        let out = self.value(a).map(|x| x.max(floor));
        let rg = self.rg(a);
        self.push(out, Op::ClampMin(a, floor), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        let rg = self.rg(a);
        self.push(out, Op::Sigmoid(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        let rg = self.rg(a);
        self.push(out, Op::Tanh(a), rg)
    }

    /// Single-channel 2-D cross-correlation over a batch `[B, H, W]` with a
    /// `[kh, kw]` kernel and independent zero padding per axis.
    /// Output is `[B, H + 2·ph − kh + 1, W + 2·pw − kw + 1]`.
    pub fn conv2d(&mut self, input: Var, kernel: Var, pad: (usize, usize)) -> Result<Var> {
        let (vi, vk) = (self.value(input), self.value(kernel));
        let (b, h, w) = match vi.shape() {
            [b, h, w] => (*b, *h, *w),
            s => {
                return Err(TensorError::InvalidShape {
                    op: "conv2d",
                    shape: s.to_vec(),
                    reason: "input must be [batch, height, width]".into(),
                })
            }
        };
        let (kh, kw) = require_matrix("conv2d", vk)?;
        if h + 2 * pad.0 < kh || w + 2 * pad.1 < kw {
            return Err(mismatch("conv2d", vi, vk));
        }
        let oh = h + 2 * pad.0 - kh + 1;
        let ow = w + 2 * pad.1 - kw + 1;
        let (x, k) = (vi.data(), vk.data());
        let mut out = vec![0.0; b * oh * ow];
        for n in 0..b {
            let img = &x[n * h * w..(n + 1) * h * w];
            let dst = &mut out[n * oh * ow..(n + 1) * oh * ow];
            for ki in 0..kh {
                for oi in 0..oh {
                    let ii = oi + ki;
                    if ii < pad.0 || ii - pad.0 >= h {
                        continue;
                    }
                    let src = &img[(ii - pad.0) * w..(ii - pad.0 + 1) * w];
                    let drow = &mut dst[oi * ow..(oi + 1) * ow];
                    for kj in 0..kw {
                        let kv = k[ki * kw + kj];
                        // output column oj reads input column oj + kj - pw
                        let lo = pad.1.saturating_sub(kj);
                        let hi = (w + pad.1).saturating_sub(kj).min(ow);
                        for oj in lo..hi {
                            drow[oj] += kv * src[oj + kj - pad.1];
                        }
                    }
                }
            }
        }
        let value = Tensor::new(vec![b, oh, ow], out)?;
        let rg = self.rg(input) || self.rg(kernel);
        Ok(self.push(value, Op::Conv2d { input, kernel, pad }, rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshaped(shape)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::Reshape(a), rg))
    }

    /// Row lookup into an embedding table.
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let vt = self.value(table);
        let (rows, _) = require_matrix("gather_rows", vt)?;
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(TensorError::IndexOutOfRange {
                op: "gather_rows",
                index: bad,
                len: rows,
            });
        }
        let out = vt.select_rows(indices);
        let rg = self.rg(table);
        Ok(self.push(out, Op::GatherRows(table, indices.to_vec()), rg))
    }

    /// Mean-reduced SmoothL1 between equally shaped tensors:
    /// `0.5·x²/β` for `|x| < β`, else `|x| − β/2`.
    pub fn smooth_l1(&mut self, pred: Var, target: Var, beta: f64) -> Result<Var> {
        let (vp, vt) = (self.value(pred), self.value(target));
        if vp.shape() != vt.shape() {
            return Err(mismatch("smooth_l1", vp, vt));
        }
        let n = vp.numel().max(1) as f64;
        let total: f64 = vp
            .data()
            .iter()
            .zip(vt.data())
            .map(|(p, t)| {
                let d = (p - t).abs();
                if d < beta {
                    0.5 * d * d / beta
                } else {
                    d - 0.5 * beta
                }
            })
            .sum();
        let rg = self.rg(pred) || self.rg(target);
        Ok(self.push(Tensor::scalar(total / n), Op::SmoothL1(pred, target, beta), rg))
    }

    /// `Σ|x|`, with `sign(0) = 0` in the backward pass.
    pub fn abs_sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().map(|x| x.abs()).sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::AbsSum(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let m = v.sum() / v.numel().max(1) as f64;
        let rg = self.rg(a);
        self.push(Tensor::scalar(m), Op::Mean(a), rg)
    }

    /// Populates gradients of the scalar `root` with respect to every node.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.backward_done {
            return Err(TensorError::BackwardTwice);
        }
        let root_shape = self.value(root).shape().to_vec();
        if root_shape.iter().product::<usize>() != 1 {
            return Err(TensorError::NonScalarRoot(root_shape));
        }
        self.grads = vec![None; self.nodes.len()];
        self.grads[root.0] = Some(Tensor::filled(&root_shape, 1.0));
        for i in (0..=root.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.propagate(i, &g);
            self.grads[i] = Some(g);
        }
        self.backward_done = true;
        Ok(())
    }

    fn send(&mut self, to: Var, contrib: Tensor) {
        if self.nodes[to.0].requires_grad {
            accumulate(&mut self.grads[to.0], contrib);
        }
    }

    fn propagate(&mut self, i: usize, g: &Tensor) {
        let nodes = &self.nodes;
        let mut out: Vec<(Var, Tensor)> = Vec::with_capacity(2);
        match &nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                let (m, k) = (va.shape()[0], va.shape()[1]);
                let n = vb.shape()[1];
                let gd = g.data();
                if nodes[a.0].requires_grad {
                    // dA = G · Bᵀ
                    let mut da = vec![0.0; m * k];
                    for r in 0..m {
                        let grow = &gd[r * n..(r + 1) * n];
                        for p in 0..k {
                            let brow = &vb.data()[p * n..(p + 1) * n];
                            da[r * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                        }
                    }
                    out.push((*a, Tensor::new(vec![m, k], da).expect("shape")));
                }
                if nodes[b.0].requires_grad {
                    // dB = Aᵀ · G
                    let mut db = vec![0.0; k * n];
                    for r in 0..m {
                        let grow = &gd[r * n..(r + 1) * n];
                        for p in 0..k {
                            let av = va.data()[r * k + p];
                            if av == 0.0 {
                                continue;
                            }
                            for (d, x) in db[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *d += av * x;
                            }
                        }
                    }
                    out.push((*b, Tensor::new(vec![k, n], db).expect("shape")));
                }
            }
            Op::Add(a, b, bc) => {
                out.push((*a, g.clone()));
                if nodes[b.0].requires_grad {
                    let vb = &nodes[b.0].value;
                    let gb = match bc {
                        Bcast::Same => g.clone(),
                        Bcast::Scalar => Tensor::filled(vb.shape(), g.sum()),
                        Bcast::Row => {
                            let n = vb.numel();
                            let mut acc = vec![0.0; n];
                            for row in g.data().chunks(n) {
                                for (s, x) in acc.iter_mut().zip(row) {
                                    *s += x;
                                }
                            }
                            Tensor::new(vb.shape().to_vec(), acc).expect("shape")
                        }
                    };
                    out.push((*b, gb));
                }
            }
            Op::Sub(a, b) => {
                out.push((*a, g.clone()));
                out.push((*b, g.map(|x| -x)));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                if nodes[a.0].requires_grad {
                    let d = g.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
                    out.push((*a, Tensor::new(va.shape().to_vec(), d).expect("shape")));
                }
                if nodes[b.0].requires_grad {
                    let d = g.data().iter().zip(va.data()).map(|(x, y)| x * y).collect();
                    out.push((*b, Tensor::new(vb.shape().to_vec(), d).expect("shape")));
                }
            }
            Op::Scale(a, f) => out.push((*a, g.map(|x| x * f))),
            Op::Concat(parts) => {
                let rows = g.rows();
                let total = g.cols();
                let mut offset = 0;
                for p in parts {
                    let w = nodes[p.0].value.cols();
                    if nodes[p.0].requires_grad {
                        let mut d = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            d.extend_from_slice(&g.data()[r * total + offset..r * total + offset + w]);
                        }
                        out.push((*p, Tensor::new(vec![rows, w], d).expect("shape")));
                    }
                    offset += w;
                }
            }
            Op::SliceCols(a, start) => {
                let va = &nodes[a.0].value;
                let cols = va.cols();
                let w = g.cols();
                let mut d = Tensor::zeros(va.shape());
                for r in 0..g.rows() {
                    d.data_mut()[r * cols + start..r * cols + start + w].copy_from_slice(g.row(r));
                }
                out.push((*a, d));
            }
            Op::Relu(a) => {
                let va = &nodes[a.0].value;
                let d = g
                    .data()
                    .iter()
                    .zip(va.data())
                    .map(|(gx, x)| if *x > 0.0 { *gx } else { 0.0 })
                    .collect();
                out.push((*a, Tensor::new(va.shape().to_vec(), d).expect("shape")));
            }
            Op::ClampMin(a, floor) => {
                let va = &nodes[a.0].value;
                let d = g
                    .data()
                    .iter()
                    .zip(va.data())
                    .map(|(gx, x)| if *x > *floor { *gx } else { 0.0 })
                    .collect();
                out.push((*a, Tensor::new(va.shape().to_vec(), d).expect("shape")));
            }
            Op::Sigmoid(a) => {
                let y = &nodes[i].value;
                let d = g.data().iter().zip(y.data()).map(|(gx, s)| gx * s * (1.0 - s)).collect();
                out.push((*a, Tensor::new(y.shape().to_vec(), d).expect("shape")));
            }
            Op::Tanh(a) => {
                let y = &nodes[i].value;
                let d = g.data().iter().zip(y.data()).map(|(gx, t)| gx * (1.0 - t * t)).collect();
                out.push((*a, Tensor::new(y.shape().to_vec(), d).expect("shape")));
            }
            Op::Conv2d { input, kernel, pad } => {
                let (vi, vk) = (&nodes[input.0].value, &nodes[kernel.0].value);
                let (b, h, w) = (vi.shape()[0], vi.shape()[1], vi.shape()[2]);
                let (kh, kw) = (vk.shape()[0], vk.shape()[1]);
                let (oh, ow) = (g.shape()[1], g.shape()[2]);
                let mut di = vec![0.0; vi.numel()];
                let mut dk = vec![0.0; vk.numel()];
                let (x, k, gd) = (vi.data(), vk.data(), g.data());
                for n in 0..b {
                    for ki in 0..kh {
                        for oi in 0..oh {
                            let ii = oi + ki;
                            if ii < pad.0 || ii - pad.0 >= h {
                                continue;
                            }
                            let src = n * h * w + (ii - pad.0) * w;
                            let grow = &gd[n * oh * ow + oi * ow..n * oh * ow + (oi + 1) * ow];
                            for kj in 0..kw {
                                let kv = k[ki * kw + kj];
                                let lo = pad.1.saturating_sub(kj);
                                let hi = (w + pad.1).saturating_sub(kj).min(ow);
                                let mut acc = 0.0;
                                for oj in lo..hi {
                                    let col = oj + kj - pad.1;
                                    acc += grow[oj] * x[src + col];
                                    di[src + col] += grow[oj] * kv;
                                }
                                dk[ki * kw + kj] += acc;
                            }
                        }
                    }
                }
                out.push((*input, Tensor::new(vi.shape().to_vec(), di).expect("shape")));
                out.push((*kernel, Tensor::new(vk.shape().to_vec(), dk).expect("shape")));
            }
            Op::Reshape(a) => {
                let shape = nodes[a.0].value.shape().to_vec();
                out.push((*a, g.clone().reshaped(&shape).expect("shape")));
            }
            Op::GatherRows(table, idx) => {
                let vt = &nodes[table.0].value;
                let c = vt.cols();
                let mut d = Tensor::zeros(vt.shape());
                for (r, &src) in idx.iter().enumerate() {
                    for (dst, x) in d.data_mut()[src * c..(src + 1) * c].iter_mut().zip(g.row(r)) {
                        *dst += x;
                    }
                }
                out.push((*table, d));
            }
            Op::SmoothL1(p, t, beta) => {
                let (vp, vt) = (&nodes[p.0].value, &nodes[t.0].value);
                let scale = g.item() / vp.numel().max(1) as f64;
                let d: Vec<f64> = vp
                    .data()
                    .iter()
                    .zip(vt.data())
                    .map(|(a, b)| {
                        let diff = a - b;
                        let slope = if diff.abs() < *beta { diff / beta } else { sign(diff) };
                        slope * scale
                    })
                    .collect();
                let dp = Tensor::new(vp.shape().to_vec(), d).expect("shape");
                out.push((*t, dp.map(|x| -x)));
                out.push((*p, dp));
            }
            Op::AbsSum(a) => {
                let s = g.item();
                out.push((*a, nodes[a.0].value.map(|x| sign(x) * s)));
            }
            Op::Sum(a) => {
                out.push((*a, Tensor::filled(nodes[a.0].value.shape(), g.item())));
            }
            Op::Mean(a) => {
                let va = &nodes[a.0].value;
                out.push((*a, Tensor::filled(va.shape(), g.item() / va.numel().max(1) as f64)));
            }
        }
        for (to, contrib) in out {
            self.send(to, contrib);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Central-difference gradient of `f` at `x`.
    fn numeric_grad(x: &Tensor, f: &dyn Fn(&Tensor) -> f64) -> Tensor {
        let h = 1e-5;
        let mut g = Tensor::zeros(x.shape());
        for i in 0..x.numel() {
            let mut plus = x.clone();
            plus.data_mut()[i] += h;
            let mut minus = x.clone();
            minus.data_mut()[i] -= h;
            g.data_mut()[i] = (f(&plus) - f(&minus)) / (2.0 * h);
        }
        g
    }

    fn rel_err(a: &Tensor, b: &Tensor) -> f64 {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs() / (x.abs() + y.abs()).max(1e-8))
            .fold(0.0, f64::max)
    }

    /// Checks every input of a graph builder against finite differences.
    /// The builder receives the tape and the input vars and returns a
    /// non-scalar node that gets reduced through a fixed random projection so
    /// every output coordinate is exercised.
    fn check(
        inputs: Vec<Tensor>,
        build: &dyn Fn(&mut Tape, &[Var]) -> Var,
        tol: f64,
    ) {
        let probe_seed = 99;
        let eval = |xs: &[Tensor]| -> f64 {
            let mut tape = Tape::new();
            let vars: Vec<Var> = xs.iter().map(|x| tape.param(x.clone())).collect();
            let out = build(&mut tape, &vars);
            let mut rng = ChaCha8Rng::seed_from_u64(probe_seed);
            let w = random(tape.value(out).shape(), &mut rng);
            tape.value(out).data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
        };
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|x| tape.param(x.clone())).collect();
        let out = build(&mut tape, &vars);
        let mut rng = ChaCha8Rng::seed_from_u64(probe_seed);
        let w = random(tape.value(out).shape(), &mut rng);
        let wv = tape.constant(w);
        let prod = tape.mul(out, wv).unwrap();
        let loss = tape.sum(prod);
        tape.backward(loss).unwrap();
        for (k, v) in vars.iter().enumerate() {
            let analytic = tape.grad(*v).cloned().unwrap_or_else(|| Tensor::zeros(inputs[k].shape()));
            let numeric = numeric_grad(&inputs[k], &|x| {
                let mut xs = inputs.clone();
                xs[k] = x.clone();
                eval(&xs)
            });
            let e = rel_err(&analytic, &numeric);
            assert!(e < tol, "input {k}: rel err {e}\n{analytic:?}\n{numeric:?}");
        }
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(1234)
    }

    // Inputs kept away from kinks (|x| > 0.05) so finite differences are valid.
    fn away_from_zero(mut t: Tensor) -> Tensor {
        for x in t.data_mut() {
            if x.abs() < 0.05 {
                *x += 0.1f64.copysign(*x);
            }
        }
        t
    }

    #[test]
    fn matmul_gradients() {
        let mut r = rng();
        check(
            vec![random(&[3, 4], &mut r), random(&[4, 2], &mut r)],
            &|t, v| t.matmul(v[0], v[1]).unwrap(),
            1e-6,
        );
    }

    #[test]
    fn elementwise_gradients() {
        let mut r = rng();
        let a = random(&[3, 4], &mut r);
        let b = random(&[3, 4], &mut r);
        check(vec![a.clone(), b.clone()], &|t, v| t.add(v[0], v[1]).unwrap(), 1e-6);
        check(vec![a.clone(), b.clone()], &|t, v| t.sub(v[0], v[1]).unwrap(), 1e-6);
        check(vec![a.clone(), b.clone()], &|t, v| t.mul(v[0], v[1]).unwrap(), 1e-6);
        check(vec![a.clone()], &|t, v| t.scale(v[0], -2.5), 1e-6);
        check(vec![a.clone()], &|t, v| t.sigmoid(v[0]), 1e-6);
        check(vec![a.clone()], &|t, v| t.tanh(v[0]), 1e-6);
        let a = away_from_zero(a);
        check(vec![a.clone()], &|t, v| t.relu(v[0]), 1e-6);
        check(vec![a.clone()], &|t, v| t.clamp_min(v[0], 0.0), 1e-6);
    }

    #[test]
    fn broadcast_add_gradients() {
        let mut r = rng();
        check(
            vec![random(&[3, 4], &mut r), random(&[1, 4], &mut r)],
            &|t, v| t.add(v[0], v[1]).unwrap(),
            1e-6,
        );
        check(
            vec![random(&[3, 4], &mut r), random(&[1, 1], &mut r)],
            &|t, v| t.add(v[0], v[1]).unwrap(),
            1e-6,
        );
    }

    #[test]
    fn structural_gradients() {
        let mut r = rng();
        let a = random(&[3, 4], &mut r);
        let b = random(&[3, 2], &mut r);
        check(vec![a.clone(), b], &|t, v| t.concat(&[v[0], v[1], v[0]]).unwrap(), 1e-6);
        check(vec![a.clone()], &|t, v| t.slice_cols(v[0], 1, 3).unwrap(), 1e-6);
        check(vec![a.clone()], &|t, v| t.reshape(v[0], &[2, 6]).unwrap(), 1e-6);
        check(vec![a.clone()], &|t, v| t.gather_rows(v[0], &[2, 0, 2]).unwrap(), 1e-6);
    }

    #[test]
    fn reduction_gradients() {
        let mut r = rng();
        let a = away_from_zero(random(&[3, 4], &mut r));
        let b = random(&[3, 4], &mut r);
        check(vec![a.clone()], &|t, v| t.sum(v[0]), 1e-6);
        check(vec![a.clone()], &|t, v| t.mean(v[0]), 1e-6);
        check(vec![a.clone()], &|t, v| t.abs_sum(v[0]), 1e-6);
        // mix of quadratic and linear regime for beta = 0.5
        check(vec![a, b], &|t, v| t.smooth_l1(v[0], v[1], 0.5).unwrap(), 1e-6);
    }

    #[test]
    fn conv2d_gradients() {
        let mut r = rng();
        let input = random(&[2, 5, 6], &mut r);
        let kernel = random(&[5, 5], &mut r);
        check(
            vec![input.clone(), kernel.clone()],
            &|t, v| t.conv2d(v[0], v[1], (0, 2)).unwrap(),
            1e-6,
        );
        check(
            vec![random(&[1, 3, 4], &mut r), random(&[2, 3], &mut r)],
            &|t, v| t.conv2d(v[0], v[1], (1, 1)).unwrap(),
            1e-6,
        );
    }

    #[test]
    fn conv2d_collapses_fields() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::filled(&[1, 5, 8], 1.0));
        let k = tape.constant(Tensor::filled(&[5, 5], 1.0));
        let y = tape.conv2d(x, k, (0, 2)).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 1, 8]);
        // edges see 3 of 5 kernel columns
        assert_eq!(tape.value(y).data()[0], 15.0);
        assert_eq!(tape.value(y).data()[1], 20.0);
        assert_eq!(tape.value(y).data()[4], 25.0);
        assert_eq!(tape.value(y).data()[7], 15.0);
    }

    #[test]
    fn relu_blocks_negative_inputs() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::new(vec![1, 3], vec![-1.0, 0.0, 2.0]).unwrap());
        let y = tape.relu(x);
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn clamp_min_subgradient_at_floor_is_zero() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::new(vec![1, 3], vec![-0.5, 0.0, 0.5]).unwrap());
        let y = tape.clamp_min(x, 0.0);
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn identity_matmul() {
        let mut r = rng();
        let a = random(&[3, 4], &mut r);
        let mut tape = Tape::new();
        let i = tape.constant(Tensor::identity(3));
        let av = tape.constant(a.clone());
        let y = tape.matmul(i, av).unwrap();
        assert_eq!(tape.value(y), &a);
    }

    #[test]
    fn sum_of_params_has_unit_gradient() {
        let mut r = rng();
        let mut tape = Tape::new();
        let p = tape.param(random(&[3, 4], &mut r));
        let s = tape.sum(p);
        tape.backward(s).unwrap();
        assert!(tape.grad(p).unwrap().data().iter().all(|&g| g == 1.0));
    }

    #[test]
    fn zero_times_x_has_zero_gradient() {
        let mut r = rng();
        let mut tape = Tape::new();
        let p = tape.param(random(&[3, 4], &mut r));
        let z = tape.scale(p, 0.0);
        let s = tape.sum(z);
        tape.backward(s).unwrap();
        assert!(tape.grad(p).unwrap().data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn composite_mlp_matches_finite_differences() {
        let mut r = rng();
        let x = random(&[4, 3], &mut r);
        check(
            vec![x, random(&[3, 5], &mut r), random(&[1, 5], &mut r), random(&[5, 2], &mut r)],
            &|t, v| {
                let h = t.matmul(v[0], v[1]).unwrap();
                let h = t.add(h, v[2]).unwrap();
                let h = t.tanh(h);
                let o = t.matmul(h, v[3]).unwrap();
                t.sigmoid(o)
            },
            1e-4,
        );
    }

    #[test]
    fn backward_contract_errors() {
        let mut tape = Tape::new();
        let p = tape.param(Tensor::zeros(&[2, 2]));
        assert!(matches!(tape.backward(p), Err(TensorError::NonScalarRoot(_))));
        let s = tape.sum(p);
        tape.backward(s).unwrap();
        assert_eq!(tape.backward(s), Err(TensorError::BackwardTwice));
        tape.reset_grads();
        tape.backward(s).unwrap();
    }

    #[test]
    fn shape_errors_name_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        let err = tape.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
        let c = tape.constant(Tensor::zeros(&[3, 2]));
        assert!(tape.mul(a, c).is_err());
    }

    #[test]
    fn forward_is_bit_deterministic() {
        let run = || {
            let mut r = rng();
            let mut tape = Tape::new();
            let a = tape.param(random(&[5, 7], &mut r));
            let b = tape.param(random(&[7, 3], &mut r));
            let c = tape.matmul(a, b).unwrap();
            let d = tape.tanh(c);
            tape.value(d).clone()
        };
        assert_eq!(run(), run());
    }
}
