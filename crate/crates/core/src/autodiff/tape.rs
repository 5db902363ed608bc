use std::ops::Range;
use std::sync::atomic::{AtomicU64, Ordering};

use super::param::{ParamId, ParamStore};
use super::tensor::{matmul_a_bt_into, matmul_at_b_into, Tensor};
use super::AutodiffError;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

#[derive(Clone, Debug)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(usize, usize),
    Add(usize, usize),
    AddRow(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Sigmoid(usize),
    Relu(usize),
    Tanh(usize),
    Exp(usize),
    Square(usize),
    Sum(usize),
    Mean(usize),
    Concat { parts: Vec<usize>, axis: usize },
    Slice { input: usize, axis: usize, start: usize },
    L2NormRows(usize),
    SqDist(usize, usize),
    Reshape(usize),
    AffineCols { input: usize, scale: Vec<f64> },
    Squash { input: usize, lo: Vec<f64>, hi: Vec<f64> },
    Conv2d { input: usize, filters: usize, bias: usize, stride: usize },
    MaxPool2d { input: usize, argmax: Vec<usize> },
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Records tensor operations for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so the node list is always
/// topologically sorted. `clear` invalidates every outstanding [`Var`].
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> AutodiffError {
    AutodiffError::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn invalid(op: &'static str, msg: impl Into<String>) -> AutodiffError {
    AutodiffError::InvalidArgument { op, msg: msg.into() }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Splits `shape` around `axis` into (outer, extent, inner).
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    /// Drops every recorded node. Vars from before the call are rejected afterwards.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.id = NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn index(&self, v: Var) -> Result<usize, AutodiffError> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(AutodiffError::UnknownNode(v.index));
        }
        Ok(v.index)
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    pub fn value(&self, v: Var) -> Result<&Tensor, AutodiffError> {
        let i = self.index(v)?;
        Ok(&self.nodes[i].value)
    }

    /// Records a constant. Gradients reach it but go no further.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input)
    }

    /// Records the current value of a trainable parameter.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let value = store.get(id).value().clone();
        self.push(value, Op::Param(id))
    }

    /// Same value as `v`, with gradient flow severed.
    pub fn detach(&mut self, v: Var) -> Result<Var, AutodiffError> {
        let value = self.value(v)?.clone();
        Ok(self.input(value))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ia, ib) = (self.index(a)?, self.index(b)?);
        let out = self.nodes[ia].value.matmul(&self.nodes[ib].value)?;
        Ok(self.push(out, Op::MatMul(ia, ib)))
    }

    fn zip_same(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<(usize, usize, Tensor), AutodiffError> {
        let (ia, ib) = (self.index(a)?, self.index(b)?);
        let (ta, tb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        if ta.shape() != tb.shape() {
            return Err(mismatch(op, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Ok((ia, ib, Tensor::new(ta.shape().to_vec(), data)?))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ia, ib, out) = self.zip_same("add", a, b, |x, y| x + y)?;
        Ok(self.push(out, Op::Add(ia, ib)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ia, ib, out) = self.zip_same("sub", a, b, |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(ia, ib)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ia, ib, out) = self.zip_same("mul", a, b, |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(ia, ib)))
    }

    /// `x (batch×n) + b (n)`, adding `b` to every row.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ix, ib) = (self.index(x)?, self.index(b)?);
        let (tx, tb) = (&self.nodes[ix].value, &self.nodes[ib].value);
        if tx.ndim() != 2 || tb.len() != tx.shape()[1] {
            return Err(mismatch("add_row", tx, tb));
        }
        let n = tb.len();
        let mut out = tx.clone();
        for row in out.data_mut().chunks_mut(n) {
            for (o, &bv) in row.iter_mut().zip(tb.data()) {
                *o += bv;
            }
        }
        Ok(self.push(out, Op::AddRow(ix, ib)))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var, AutodiffError> {
        let ix = self.index(x)?;
        let out = self.nodes[ix].value.map(|v| v * c);
        Ok(self.push(out, Op::Scale(ix, c)))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var, AutodiffError> {
        let ix = self.index(x)?;
        let out = self.nodes[ix].value.map(|v| v + c);
        Ok(self.push(out, Op::AddScalar(ix)))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: impl Fn(usize) -> Op) -> Result<Var, AutodiffError> {
        let ix = self.index(x)?;
        let out = self.nodes[ix].value.map(f);
        Ok(self.push(out, op(ix)))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.unary(x, sigmoid, Op::Sigmoid)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.unary(x, |v| v.max(0.0), Op::Relu)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.unary(x, f64::tanh, Op::Tanh)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.unary(x, f64::exp, Op::Exp)
    }

    pub fn square(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.unary(x, |v| v * v, Op::Square)
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let ix = self.index(x)?;
        let s = self.nodes[ix].value.sum();
        Ok(self.push(Tensor::scalar(s), Op::Sum(ix)))
    }

    /// Mean of all elements, as a scalar.
    pub fn mean(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let ix = self.index(x)?;
        let t = &self.nodes[ix].value;
        if t.is_empty() {
            return Err(invalid("mean", "empty tensor"));
        }
        let m = t.sum() / t.len() as f64;
        Ok(self.push(Tensor::scalar(m), Op::Mean(ix)))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, AutodiffError> {
        let idx = parts.iter().map(|&p| self.index(p)).collect::<Result<Vec<_>, _>>()?;
        let Some(&first) = idx.first() else {
            return Err(invalid("concat", "no inputs"));
        };
        let base = self.nodes[first].value.shape().to_vec();
        if axis >= base.len() {
            return Err(invalid("concat", format!("axis {axis} out of range for shape {base:?}")));
        }
        let mut total = 0;
        for &i in &idx {
            let s = self.nodes[i].value.shape();
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(mismatch("concat", &self.nodes[first].value, &self.nodes[i].value));
            }
            total += s[axis];
        }
        let (outer, _, inner) = axis_split(&base, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &i in &idx {
                let t = &self.nodes[i].value;
                let block = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * block..(o + 1) * block]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let out = Tensor::new(shape, data)?;
        Ok(self.push(out, Op::Concat { parts: idx, axis }))
    }

    pub fn slice(&mut self, x: Var, axis: usize, range: Range<usize>) -> Result<Var, AutodiffError> {
        let ix = self.index(x)?;
        let t = &self.nodes[ix].value;
        if axis >= t.ndim() || range.start >= range.end || range.end > t.shape()[axis] {
            return Err(invalid(
                "slice",
                format!("range {range:?} on axis {axis} of shape {:?}", t.shape()),
            ));
        }
        let (outer, extent, inner) = axis_split(t.shape(), axis);
        let width = range.end - range.start;
        let mut data = Vec::with_capacity(outer * width * inner);
        for o in 0..outer {
            let base = o * extent * inner;
            data.extend_from_slice(&t.data()[base + range.start * inner..base + range.end * inner]);
        }
        let mut shape = t.shape().to_vec();
        shape[axis] = width;
        let out = Tensor::new(shape, data)?;
        Ok(self.push(out, Op::Slice { input: ix, axis, start: range.start }))
    }

    /// Euclidean norm of each row of a matrix.
    pub fn l2norm_rows(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let ix = self.index(x)?;
        let t = &self.nodes[ix].value;
        if t.ndim() != 2 {
            return Err(invalid("l2norm_rows", format!("expected a matrix, got {:?}", t.shape())));
        }
        let norms = (0..t.rows())
            .map(|r| t.row(r).iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        Ok(self.push(Tensor::vector(norms), Op::L2NormRows(ix)))
    }

    /// Pairwise squared Euclidean distances between rows: (m×d, n×d) → m×n.
    pub fn sqdist(&mut self, x: Var, y: Var) -> Result<Var, AutodiffError> {
        let (ix, iy) = (self.index(x)?, self.index(y)?);
        let (tx, ty) = (&self.nodes[ix].value, &self.nodes[iy].value);
        if tx.ndim() != 2 || ty.ndim() != 2 || tx.shape()[1] != ty.shape()[1] {
            return Err(mismatch("sqdist", tx, ty));
        }
        let (m, n) = (tx.rows(), ty.rows());
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            let xi = tx.row(i);
            for j in 0..n {
                out.push(xi.iter().zip(ty.row(j)).map(|(a, b)| (a - b) * (a - b)).sum());
            }
        }
        let out = Tensor::new(vec![m, n], out)?;
        Ok(self.push(out, Op::SqDist(ix, iy)))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, AutodiffError> {
        let ix = self.index(x)?;
        let out = self.nodes[ix].value.clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(ix)))
    }

    /// Column-wise affine map with constant coefficients: `x[:, j] * scale[j] + shift[j]`.
    pub fn affine_cols(&mut self, x: Var, scale: &[f64], shift: &[f64]) -> Result<Var, AutodiffError> {
        let ix = self.index(x)?;
        let t = &self.nodes[ix].value;
        if t.ndim() != 2 || t.shape()[1] != scale.len() || scale.len() != shift.len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "affine_cols",
                lhs: t.shape().to_vec(),
                rhs: vec![scale.len(), shift.len()],
            });
        }
        let mut out = t.clone();
        for row in out.data_mut().chunks_mut(scale.len()) {
            for ((v, a), b) in row.iter_mut().zip(scale).zip(shift) {
                *v = *v * a + b;
            }
        }
        Ok(self.push(out, Op::AffineCols { input: ix, scale: scale.to_vec() }))
    }

    /// `lo[j] + (hi[j] - lo[j]) * sigmoid(x[:, j])`, kept strictly inside `(lo, hi)`.
    pub fn squash(&mut self, x: Var, lo: &[f64], hi: &[f64]) -> Result<Var, AutodiffError> {
        let ix = self.index(x)?;
        let t = &self.nodes[ix].value;
        if t.ndim() != 2 || t.shape()[1] != lo.len() || lo.len() != hi.len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "squash",
                lhs: t.shape().to_vec(),
                rhs: vec![lo.len(), hi.len()],
            });
        }
        let mut out = t.clone();
        for row in out.data_mut().chunks_mut(lo.len()) {
            for ((v, &a), &b) in row.iter_mut().zip(lo).zip(hi) {
                let y = a + (b - a) * sigmoid(*v);
                *v = y.clamp(a.next_up(), b.next_down());
            }
        }
        Ok(self.push(
            out,
            Op::Squash {
                input: ix,
                lo: lo.to_vec(),
                hi: hi.to_vec(),
            },
        ))
    }

    /// Valid-padding strided convolution of single-channel images.
    ///
    /// `x`: batch×H×W, `filters`: F×KH×KW, `bias`: F. Output: batch×F×OH×OW with
    /// `OH = (H - KH) / stride + 1`.
    pub fn conv2d(&mut self, x: Var, filters: Var, bias: Var, stride: usize) -> Result<Var, AutodiffError> {
        let (ix, iw, ib) = (self.index(x)?, self.index(filters)?, self.index(bias)?);
        let (tx, tw, tb) = (&self.nodes[ix].value, &self.nodes[iw].value, &self.nodes[ib].value);
        if tx.ndim() != 3 || tw.ndim() != 3 || tb.len() != tw.shape()[0] || stride == 0 {
            return Err(mismatch("conv2d", tx, tw));
        }
        let (b, h, w) = (tx.shape()[0], tx.shape()[1], tx.shape()[2]);
        let (f, kh, kw) = (tw.shape()[0], tw.shape()[1], tw.shape()[2]);
        if h < kh || w < kw {
            return Err(invalid(
                "conv2d",
                format!("input {h}×{w} smaller than filter footprint {kh}×{kw}"),
            ));
        }
        let (oh, ow) = ((h - kh) / stride + 1, (w - kw) / stride + 1);
        let (xd, wd, bd) = (tx.data(), tw.data(), tb.data());
        let mut out = vec![0.0; b * f * oh * ow];
        for bi in 0..b {
            let img = &xd[bi * h * w..(bi + 1) * h * w];
            for fi in 0..f {
                let ker = &wd[fi * kh * kw..(fi + 1) * kh * kw];
                let dst = &mut out[(bi * f + fi) * oh * ow..(bi * f + fi + 1) * oh * ow];
                for r in 0..oh {
                    for c in 0..ow {
                        let mut acc = bd[fi];
                        for u in 0..kh {
                            let src = &img[(r * stride + u) * w + c * stride..][..kw];
                            acc += src.iter().zip(&ker[u * kw..(u + 1) * kw]).map(|(a, k)| a * k).sum::<f64>();
                        }
                        dst[r * ow + c] = acc;
                    }
                }
            }
        }
        let out = Tensor::new(vec![b, f, oh, ow], out)?;
        Ok(self.push(
            out,
            Op::Conv2d {
                input: ix,
                filters: iw,
                bias: ib,
                stride,
            },
        ))
    }

    /// Non-overlapping max pooling over the two trailing axes (floor on ragged edges).
    pub fn maxpool2d(&mut self, x: Var, window: usize) -> Result<Var, AutodiffError> {
        let ix = self.index(x)?;
        let t = &self.nodes[ix].value;
        let nd = t.ndim();
        if nd < 2 || window == 0 {
            return Err(invalid("maxpool2d", format!("shape {:?}, window {window}", t.shape())));
        }
        let (h, w) = (t.shape()[nd - 2], t.shape()[nd - 1]);
        if h < window || w < window {
            return Err(invalid("maxpool2d", format!("input {h}×{w} smaller than window {window}")));
        }
        let (ph, pw) = (h / window, w / window);
        let lead: usize = t.shape()[..nd - 2].iter().product();
        let mut out = Vec::with_capacity(lead * ph * pw);
        let mut argmax = Vec::with_capacity(lead * ph * pw);
        for l in 0..lead {
            let base = l * h * w;
            for r in 0..ph {
                for c in 0..pw {
                    let mut best = base + r * window * w + c * window;
                    for u in 0..window {
                        for v in 0..window {
                            let k = base + (r * window + u) * w + c * window + v;
                            if t.data()[k] > t.data()[best] {
                                best = k;
                            }
                        }
                    }
                    out.push(t.data()[best]);
                    argmax.push(best);
                }
            }
        }
        let mut shape = t.shape().to_vec();
        shape[nd - 2] = ph;
        shape[nd - 1] = pw;
        let out = Tensor::new(shape, out)?;
        Ok(self.push(out, Op::MaxPool2d { input: ix, argmax }))
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients, AutodiffError> {
        let r = self.index(root)?;
        let root_val = &self.nodes[r].value;
        if root_val.len() != 1 {
            return Err(AutodiffError::NonScalarRoot(root_val.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; r + 1];
        grads[r] = Some(vec![1.0]);

        for i in (0..=r).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }

        let params = self
            .nodes
            .iter()
            .enumerate()
            .take(r + 1)
            .filter_map(|(i, n)| match n.op {
                Op::Param(id) => Some((id, i)),
                _ => None,
            })
            .collect();
        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| g.map(|g| Tensor::new(self.nodes[i].value.shape().to_vec(), g).expect("gradient shape")))
            .collect();
        Ok(Gradients {
            tape: self.id,
            grads,
            params,
        })
    }

    /// Backward sweep that adds parameter gradients into `store`'s accumulators.
    pub fn backward_into(&self, root: Var, store: &mut ParamStore) -> Result<Gradients, AutodiffError> {
        let g = self.backward(root)?;
        g.accumulate_into(store);
        Ok(g)
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        macro_rules! acc {
            ($j:expr) => {
                slot(grads, &self.nodes, $j)
            };
        }
        match &node.op {
            Op::Input | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                matmul_a_bt_into(g, tb.data(), acc!(*a), m, n, k);
                matmul_at_b_into(ta.data(), g, acc!(*b), m, k, n);
            }
            Op::Add(a, b) => {
                add_into(acc!(*a), g, 1.0);
                add_into(acc!(*b), g, 1.0);
            }
            Op::Sub(a, b) => {
                add_into(acc!(*a), g, 1.0);
                add_into(acc!(*b), g, -1.0);
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.nodes[*a].value.data(), self.nodes[*b].value.data());
                let ga = acc!(*a);
                for ((o, gv), bv) in ga.iter_mut().zip(g).zip(tb) {
                    *o += gv * bv;
                }
                let gb = acc!(*b);
                for ((o, gv), av) in gb.iter_mut().zip(g).zip(ta) {
                    *o += gv * av;
                }
            }
            Op::AddRow(x, b) => {
                add_into(acc!(*x), g, 1.0);
                let gb = acc!(*b);
                let n = gb.len();
                for row in g.chunks(n) {
                    add_into(gb, row, 1.0);
                }
            }
            Op::Scale(x, c) => add_into(acc!(*x), g, *c),
            Op::AddScalar(x) => add_into(acc!(*x), g, 1.0),
            Op::Sigmoid(x) => {
                let gx = acc!(*x);
                for ((o, gv), y) in gx.iter_mut().zip(g).zip(out.data()) {
                    *o += gv * y * (1.0 - y);
                }
            }
            Op::Relu(x) => {
                let xin = self.nodes[*x].value.data();
                let gx = acc!(*x);
                for ((o, gv), xv) in gx.iter_mut().zip(g).zip(xin) {
                    if *xv > 0.0 {
                        *o += gv;
                    }
                }
            }
            Op::Tanh(x) => {
                let gx = acc!(*x);
                for ((o, gv), y) in gx.iter_mut().zip(g).zip(out.data()) {
                    *o += gv * (1.0 - y * y);
                }
            }
            Op::Exp(x) => {
                let gx = acc!(*x);
                for ((o, gv), y) in gx.iter_mut().zip(g).zip(out.data()) {
                    *o += gv * y;
                }
            }
            Op::Square(x) => {
                let xin = self.nodes[*x].value.data();
                let gx = acc!(*x);
                for ((o, gv), xv) in gx.iter_mut().zip(g).zip(xin) {
                    *o += 2.0 * gv * xv;
                }
            }
            Op::Sum(x) => {
                for o in acc!(*x).iter_mut() {
                    *o += g[0];
                }
            }
            Op::Mean(x) => {
                let gx = acc!(*x);
                let s = g[0] / gx.len() as f64;
                for o in gx.iter_mut() {
                    *o += s;
                }
            }
            Op::Concat { parts, axis } => {
                let (outer, total, inner) = axis_split(out.shape(), *axis);
                let mut offset = 0;
                for &p in parts {
                    let ext = self.nodes[p].value.shape()[*axis];
                    let gp = acc!(p);
                    for o in 0..outer {
                        let src = &g[(o * total + offset) * inner..(o * total + offset + ext) * inner];
                        add_into(&mut gp[o * ext * inner..(o + 1) * ext * inner], src, 1.0);
                    }
                    offset += ext;
                }
            }
            Op::Slice { input, axis, start } => {
                let (outer, extent, inner) = axis_split(self.nodes[*input].value.shape(), *axis);
                let width = out.shape()[*axis];
                let gx = acc!(*input);
                for o in 0..outer {
                    let dst = &mut gx[(o * extent + start) * inner..(o * extent + start + width) * inner];
                    add_into(dst, &g[o * width * inner..(o + 1) * width * inner], 1.0);
                }
            }
            Op::L2NormRows(x) => {
                let tx = &self.nodes[*x].value;
                let n = tx.shape()[1];
                let gx = acc!(*x);
                for r in 0..tx.rows() {
                    let norm = out.data()[r];
                    if norm == 0.0 {
                        continue;
                    }
                    let s = g[r] / norm;
                    for (o, v) in gx[r * n..(r + 1) * n].iter_mut().zip(tx.row(r)) {
                        *o += s * v;
                    }
                }
            }
            Op::SqDist(x, y) => {
                let (tx, ty) = (&self.nodes[*x].value, &self.nodes[*y].value);
                let (m, n, d) = (tx.rows(), ty.rows(), tx.shape()[1]);
                let mut gxv = vec![0.0; m * d];
                let mut gyv = vec![0.0; n * d];
                for i in 0..m {
                    let xi = tx.row(i);
                    for j in 0..n {
                        let gij = 2.0 * g[i * n + j];
                        if gij == 0.0 {
                            continue;
                        }
                        let yj = ty.row(j);
                        for k in 0..d {
                            let diff = gij * (xi[k] - yj[k]);
                            gxv[i * d + k] += diff;
                            gyv[j * d + k] -= diff;
                        }
                    }
                }
                add_into(acc!(*x), &gxv, 1.0);
                add_into(acc!(*y), &gyv, 1.0);
            }
            Op::Reshape(x) => add_into(acc!(*x), g, 1.0),
            Op::AffineCols { input, scale } => {
                let gx = acc!(*input);
                let n = scale.len();
                for (grow, orow) in gx.chunks_mut(n).zip(g.chunks(n)) {
                    for ((o, gv), a) in grow.iter_mut().zip(orow).zip(scale) {
                        *o += gv * a;
                    }
                }
            }
            Op::Squash { input, lo, hi } => {
                let xin = self.nodes[*input].value.data();
                let n = lo.len();
                let gx = acc!(*input);
                for (k, (o, gv)) in gx.iter_mut().zip(g).enumerate() {
                    let s = sigmoid(xin[k]);
                    *o += gv * (hi[k % n] - lo[k % n]) * s * (1.0 - s);
                }
            }
            Op::Conv2d {
                input,
                filters,
                bias,
                stride,
            } => {
                let (tx, tw) = (&self.nodes[*input].value, &self.nodes[*filters].value);
                let (b, h, w) = (tx.shape()[0], tx.shape()[1], tx.shape()[2]);
                let (f, kh, kw) = (tw.shape()[0], tw.shape()[1], tw.shape()[2]);
                let (oh, ow) = (out.shape()[2], out.shape()[3]);
                let s = *stride;
                let mut gx = vec![0.0; tx.len()];
                let mut gw = vec![0.0; tw.len()];
                let mut gb = vec![0.0; f];
                for bi in 0..b {
                    let img = &tx.data()[bi * h * w..(bi + 1) * h * w];
                    let gimg = &mut gx[bi * h * w..(bi + 1) * h * w];
                    for fi in 0..f {
                        let ker = &tw.data()[fi * kh * kw..(fi + 1) * kh * kw];
                        let gker = &mut gw[fi * kh * kw..(fi + 1) * kh * kw];
                        let gout = &g[(bi * f + fi) * oh * ow..(bi * f + fi + 1) * oh * ow];
                        for r in 0..oh {
                            for c in 0..ow {
                                let go = gout[r * ow + c];
                                if go == 0.0 {
                                    continue;
                                }
                                gb[fi] += go;
                                for u in 0..kh {
                                    let base = (r * s + u) * w + c * s;
                                    for v in 0..kw {
                                        gker[u * kw + v] += go * img[base + v];
                                        gimg[base + v] += go * ker[u * kw + v];
                                    }
                                }
                            }
                        }
                    }
                }
                add_into(acc!(*input), &gx, 1.0);
                add_into(acc!(*filters), &gw, 1.0);
                add_into(acc!(*bias), &gb, 1.0);
            }
            Op::MaxPool2d { input, argmax } => {
                let gx = acc!(*input);
                for (gv, &k) in g.iter().zip(argmax) {
                    gx[k] += gv;
                }
            }
        }
    }
}

fn slot<'a>(grads: &'a mut [Option<Vec<f64>>], nodes: &[Node], j: usize) -> &'a mut Vec<f64> {
    let len = nodes[j].value.len();
    grads[j].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64], c: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += c * s;
    }
}

/// Result of a reverse sweep: the gradient of the root with respect to every
/// node that influences it.
#[derive(Debug, Clone)]
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Tensor>>,
    params: Vec<(ParamId, usize)>,
}

impl Gradients {
    /// Gradient of the root with respect to `v`; `None` when `v` does not
    /// influence the root (or came from another tape).
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(v.index).and_then(Option::as_ref)
    }

    /// Adds every parameter gradient into the matching accumulator.
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        for &(id, node) in &self.params {
            if let Some(g) = &self.grads[node] {
                store.get_mut(id).accumulate(g);
            }
        }
    }
}
