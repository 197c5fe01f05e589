//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Tape`] records every operation applied to its variables. Values are
//! computed eagerly; [`Tape::backward`] walks the record in reverse and
//! returns the gradient of a scalar loss with respect to every variable that
//! was created with `requires_grad`.
//!
//! ```
//! use depgraph::autodiff::Tape;
//! use depgraph::Tensor;
//!
//! let mut tape = Tape::new();
//! let x = tape.param(Tensor::scalar(3.0));
//! let y = tape.mul(x, x).unwrap();
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.get(x).unwrap().item(), 6.0);
//! ```

use crate::error::{Error, Result};
use crate::parallel;
use crate::tensor::Tensor;

/// Negative slope of the leaky rectifier.
pub const LEAKY_SLOPE: f64 = 0.2;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum MatMulKind {
    /// `[.., m, k] x [k, n]`: the right operand is shared across leading dims.
    Shared { rows: usize, k: usize, n: usize },
    /// `[b, m, k] x [b, k, n]`.
    Batched {
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Binary {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Unary {
    Sigmoid,
    LeakyRelu,
    Elu,
    Exp,
    Log,
    Cosh,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var, MatMulKind),
    Binary(Binary, Var, Var, Broadcast),
    Unary(Unary, Var),
    ScalarMul(Var, f64),
    AddScalar(Var),
    Softmax(Var, Axis),
    LogSoftmax(Var, Axis),
    Sum(Var),
    Mean(Var),
    SumAxis(Var, Axis),
    Concat(Vec<Var>, Axis),
    Reshape(Var),
    Gather(Var, Vec<Option<usize>>),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Record of operations, in creation order. Inputs always precede outputs.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `v`, or `None` when `v` does not require grad or the
    /// loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

/// `(outer, len, inner)` decomposition of a shape around one axis.
#[derive(Clone, Copy, Debug)]
struct Axis {
    outer: usize,
    len: usize,
    inner: usize,
}

impl Axis {
    fn of(shape: &[usize], axis: usize) -> Self {
        Self {
            outer: shape[..axis].iter().product(),
            len: shape[axis],
            inner: shape[axis + 1..].iter().product(),
        }
    }
}

/// Index plan for a same-rank numpy-style broadcast.
#[derive(Clone, Debug)]
struct Broadcast {
    out_shape: Vec<usize>,
    a_strides: Vec<usize>,
    b_strides: Vec<usize>,
    same: bool,
}

impl Broadcast {
    fn plan(op: &'static str, a: &[usize], b: &[usize]) -> Result<Self> {
        if a == b {
            return Ok(Self {
                out_shape: a.to_vec(),
                a_strides: vec![],
                b_strides: vec![],
                same: true,
            });
        }
        if a.len() != b.len() {
            return Err(Error::shape(op, a, b));
        }
        let mut out_shape = Vec::with_capacity(a.len());
        for (&da, &db) in a.iter().zip(b) {
            if da == db || db == 1 {
                out_shape.push(da);
            } else if da == 1 {
                out_shape.push(db);
            } else {
                return Err(Error::shape(op, a, b));
            }
        }
        Ok(Self {
            a_strides: broadcast_strides(a),
            b_strides: broadcast_strides(b),
            out_shape,
            same: false,
        })
    }

    /// Calls `f(out, a, b)` with flat offsets for every output element.
    fn for_each(&self, mut f: impl FnMut(usize, usize, usize)) {
        let n: usize = self.out_shape.iter().product();
        if self.same {
            for i in 0..n {
                f(i, i, i);
            }
            return;
        }
        let rank = self.out_shape.len();
        let mut idx = vec![0usize; rank];
        let (mut ia, mut ib) = (0usize, 0usize);
        for o in 0..n {
            f(o, ia, ib);
            for d in (0..rank).rev() {
                idx[d] += 1;
                ia += self.a_strides[d];
                ib += self.b_strides[d];
                if idx[d] < self.out_shape[d] {
                    break;
                }
                ia -= self.a_strides[d] * idx[d];
                ib -= self.b_strides[d] * idx[d];
                idx[d] = 0;
            }
        }
    }
}

/// Row-major strides with zero stride on size-1 dims.
fn broadcast_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![0; shape.len()];
    let mut acc = 1;
    for d in (0..shape.len()).rev() {
        strides[d] = if shape[d] == 1 { 0 } else { acc };
        acc *= shape[d];
    }
    strides
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

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that does not receive a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.needs(v)
    }

    // ---------------------------------------------------------------- matmul

    /// Matrix product. Supports `[.., m, k] x [k, n]` (shared right operand)
    /// and `[b, m, k] x [b, k, n]` (batched).
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() < 2 || sb.len() < 2 {
            return Err(Error::shape("matmul", &sa, &sb));
        }
        let k = sa[sa.len() - 1];
        let kind = if sb.len() == 2 {
            if sb[0] != k {
                return Err(Error::shape("matmul", &sa, &sb));
            }
            MatMulKind::Shared {
                rows: sa[..sa.len() - 1].iter().product(),
                k,
                n: sb[1],
            }
        } else if sa.len() == 3 && sb.len() == 3 && sa[0] == sb[0] && sb[1] == k {
            MatMulKind::Batched {
                batch: sa[0],
                m: sa[1],
                k,
                n: sb[2],
            }
        } else {
            return Err(Error::shape("matmul", &sa, &sb));
        };
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let (data, shape) = match kind {
            MatMulKind::Shared { rows, k, n } => {
                let mut out = vec![0.0; rows * n];
                matmul_rows(av, bv, &mut out, k, n);
                let mut shape = sa[..sa.len() - 1].to_vec();
                shape.push(n);
                (out, shape)
            }
            MatMulKind::Batched { batch, m, k, n } => {
                let mut out = vec![0.0; batch * m * n];
                parallel::for_each_chunk(&mut out, m * n, |bi, chunk| {
                    let a_blk = &av[bi * m * k..(bi + 1) * m * k];
                    let b_blk = &bv[bi * k * n..(bi + 1) * k * n];
                    matmul_block(a_blk, b_blk, chunk, k, n);
                });
                (out, vec![batch, m, n])
            }
        };
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(
            Tensor::from_parts(shape, data),
            Op::MatMul(a, b, kind),
            needs,
        ))
    }

    // -------------------------------------------------------------- binaries

    fn binary(&mut self, kind: Binary, name: &'static str, a: Var, b: Var) -> Result<Var> {
        let plan = Broadcast::plan(name, self.shape(a), self.shape(b))?;
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let f = match kind {
            Binary::Add => |x: f64, y: f64| x + y,
            Binary::Sub => |x: f64, y: f64| x - y,
            Binary::Mul => |x: f64, y: f64| x * y,
        };
        let data = if plan.same {
            parallel::zip_map(av, bv, f)
        } else {
            let mut out = vec![0.0; plan.out_shape.iter().product()];
            plan.for_each(|o, ia, ib| out[o] = f(av[ia], bv[ib]));
            out
        };
        let needs = self.needs(a) || self.needs(b);
        let value = Tensor::from_parts(plan.out_shape.clone(), data);
        Ok(self.push(value, Op::Binary(kind, a, b, plan), needs))
    }

    /// Elementwise sum with same-rank broadcasting over size-1 dims.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, "add", a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, "sub", a, b)
    }

    /// Elementwise product with same-rank broadcasting over size-1 dims.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, "mul", a, b)
    }

    // --------------------------------------------------------------- unaries

    fn unary(&mut self, kind: Unary, a: Var) -> Var {
        let av = self.value(a).data();
        let data = match kind {
            Unary::Sigmoid => parallel::map(av, sigmoid),
            Unary::LeakyRelu => parallel::map(av, |x| if x > 0.0 { x } else { LEAKY_SLOPE * x }),
            Unary::Elu => parallel::map(av, |x| if x > 0.0 { x } else { x.exp_m1() }),
            Unary::Exp => parallel::map(av, f64::exp),
            Unary::Log => parallel::map(av, f64::ln),
            Unary::Cosh => parallel::map(av, f64::cosh),
        };
        let shape = self.shape(a).to_vec();
        let needs = self.needs(a);
        self.push(Tensor::from_parts(shape, data), Op::Unary(kind, a), needs)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(Unary::Sigmoid, a)
    }

    /// Leaky rectifier with slope [`LEAKY_SLOPE`] below zero.
    pub fn leaky_relu(&mut self, a: Var) -> Var {
        self.unary(Unary::LeakyRelu, a)
    }

    pub fn elu(&mut self, a: Var) -> Var {
        self.unary(Unary::Elu, a)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(Unary::Exp, a)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(Unary::Log, a)
    }

    pub fn cosh(&mut self, a: Var) -> Var {
        self.unary(Unary::Cosh, a)
    }

    pub fn scalar_mul(&mut self, a: Var, s: f64) -> Var {
        let data = parallel::map(self.value(a).data(), |x| x * s);
        let shape = self.shape(a).to_vec();
        let needs = self.needs(a);
        self.push(Tensor::from_parts(shape, data), Op::ScalarMul(a, s), needs)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let data = parallel::map(self.value(a).data(), |x| x + s);
        let shape = self.shape(a).to_vec();
        let needs = self.needs(a);
        self.push(Tensor::from_parts(shape, data), Op::AddScalar(a), needs)
    }

    // ------------------------------------------------------------ reductions

    fn check_axis(&self, op: &'static str, a: Var, axis: usize) -> Result<Axis> {
        let shape = self.shape(a);
        if axis >= shape.len() || shape[axis] == 0 {
            return Err(Error::shape(op, shape, &[axis]));
        }
        Ok(Axis::of(shape, axis))
    }

    /// Softmax along `axis`.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let ax = self.check_axis("softmax", a, axis)?;
        let data = axis_map(self.value(a).data(), ax, |vals, out| {
            let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for (o, &v) in out.iter_mut().zip(vals) {
                *o = (v - max).exp();
                total += *o;
            }
            for o in out.iter_mut() {
                *o /= total;
            }
        });
        let shape = self.shape(a).to_vec();
        let needs = self.needs(a);
        Ok(self.push(Tensor::from_parts(shape, data), Op::Softmax(a, ax), needs))
    }

    /// Log-softmax along `axis`.
    pub fn log_softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let ax = self.check_axis("log_softmax", a, axis)?;
        let data = axis_map(self.value(a).data(), ax, |vals, out| {
            let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + vals.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for (o, &v) in out.iter_mut().zip(vals) {
                *o = v - lse;
            }
        });
        let shape = self.shape(a).to_vec();
        let needs = self.needs(a);
        Ok(self.push(Tensor::from_parts(shape, data), Op::LogSoftmax(a, ax), needs))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let needs = self.needs(a);
        self.push(Tensor::scalar(s), Op::Sum(a), needs)
    }

    /// Mean of all elements, as a scalar.
    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.sum() / t.len() as f64;
        let needs = self.needs(a);
        self.push(Tensor::scalar(s), Op::Mean(a), needs)
    }

    /// Sum along `axis`; the axis is kept with size 1.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let ax = self.check_axis("sum_axis", a, axis)?;
        let av = self.value(a).data();
        let mut out = vec![0.0; ax.outer * ax.inner];
        for o in 0..ax.outer {
            for l in 0..ax.len {
                let base = (o * ax.len + l) * ax.inner;
                for i in 0..ax.inner {
                    out[o * ax.inner + i] += av[base + i];
                }
            }
        }
        let mut shape = self.shape(a).to_vec();
        shape[axis] = 1;
        let needs = self.needs(a);
        Ok(self.push(Tensor::from_parts(shape, out), Op::SumAxis(a, ax), needs))
    }

    // ------------------------------------------------------------- structure

    /// Concatenation along `axis`. All other dims must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::shape("concat", &base, &[axis]));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let ok = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (x, y))| d == axis || x == y);
            if !ok {
                return Err(Error::shape("concat", &base, s));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let t = self.value(p);
                let blk = t.shape()[axis] * inner;
                out.extend_from_slice(&t.data()[o * blk..(o + 1) * blk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let needs = parts.iter().any(|&p| self.needs(p));
        let ax = Axis {
            outer,
            len: total,
            inner,
        };
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::Concat(parts.to_vec(), ax),
            needs,
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshaped(shape.to_vec())?;
        let needs = self.needs(a);
        Ok(self.push(value, Op::Reshape(a), needs))
    }

    /// Builds a tensor of `shape` whose element `k` is `a.flat[idx[k]]`, or
    /// zero where `idx[k]` is `None`. Gradients scatter-add back.
    pub fn gather(&mut self, a: Var, idx: Vec<Option<usize>>, shape: &[usize]) -> Result<Var> {
        let n: usize = shape.iter().product();
        let src = self.value(a).data();
        if idx.len() != n || idx.iter().flatten().any(|&i| i >= src.len()) {
            return Err(Error::shape("gather", self.shape(a), shape));
        }
        let data = idx.iter().map(|i| i.map_or(0.0, |i| src[i])).collect();
        let needs = self.needs(a);
        Ok(self.push(
            Tensor::from_parts(shape.to_vec(), data),
            Op::Gather(a, idx),
            needs,
        ))
    }

    // -------------------------------------------------------------- backward

    /// Gradient of the scalar `loss` with respect to every variable that
    /// requires grad.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(node, &g, &mut grads);
            // Interior nodes keep their gradient for inspection.
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.needs(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let gd = g.data();
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b, kind) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                match *kind {
                    MatMulKind::Shared { rows, k, n } => {
                        if self.needs(*a) {
                            let mut ga = vec![0.0; rows * k];
                            matmul_rows_bt(gd, bv.data(), &mut ga, n, k);
                            let t = Tensor::from_parts(av.shape().to_vec(), ga);
                            self.accumulate(grads, *a, t);
                        }
                        if self.needs(*b) {
                            let mut gb = vec![0.0; k * n];
                            matmul_at_rows(av.data(), gd, &mut gb, rows, k, n);
                            let t = Tensor::from_parts(bv.shape().to_vec(), gb);
                            self.accumulate(grads, *b, t);
                        }
                    }
                    MatMulKind::Batched { batch, m, k, n } => {
                        let (adata, bdata) = (av.data(), bv.data());
                        if self.needs(*a) {
                            let mut ga = vec![0.0; batch * m * k];
                            parallel::for_each_chunk(&mut ga, m * k, |bi, chunk| {
                                let g_blk = &gd[bi * m * n..(bi + 1) * m * n];
                                let b_blk = &bdata[bi * k * n..(bi + 1) * k * n];
                                matmul_rows_bt(g_blk, b_blk, chunk, n, k);
                            });
                            let t = Tensor::from_parts(av.shape().to_vec(), ga);
                            self.accumulate(grads, *a, t);
                        }
                        if self.needs(*b) {
                            let mut gb = vec![0.0; batch * k * n];
                            parallel::for_each_chunk(&mut gb, k * n, |bi, chunk| {
                                let a_blk = &adata[bi * m * k..(bi + 1) * m * k];
                                let g_blk = &gd[bi * m * n..(bi + 1) * m * n];
                                matmul_at_rows(a_blk, g_blk, chunk, m, k, n);
                            });
                            let t = Tensor::from_parts(bv.shape().to_vec(), gb);
                            self.accumulate(grads, *b, t);
                        }
                    }
                }
            }
            Op::Binary(kind, a, b, plan) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let (adata, bdata) = (av.data(), bv.data());
                if plan.same {
                    if self.needs(*a) {
                        let ga = match kind {
                            Binary::Add | Binary::Sub => gd.to_vec(),
                            Binary::Mul => parallel::zip_map(gd, bdata, |g, y| g * y),
                        };
                        self.accumulate(grads, *a, Tensor::from_parts(av.shape().to_vec(), ga));
                    }
                    if self.needs(*b) {
                        let gb = match kind {
                            Binary::Add => gd.to_vec(),
                            Binary::Sub => parallel::map(gd, |g| -g),
                            Binary::Mul => parallel::zip_map(gd, adata, |g, x| g * x),
                        };
                        self.accumulate(grads, *b, Tensor::from_parts(bv.shape().to_vec(), gb));
                    }
                } else {
                    let mut ga = self.needs(*a).then(|| vec![0.0; adata.len()]);
                    let mut gb = self.needs(*b).then(|| vec![0.0; bdata.len()]);
                    plan.for_each(|o, ia, ib| {
                        let (da, db) = match kind {
                            Binary::Add => (gd[o], gd[o]),
                            Binary::Sub => (gd[o], -gd[o]),
                            Binary::Mul => (gd[o] * bdata[ib], gd[o] * adata[ia]),
                        };
                        if let Some(ga) = ga.as_mut() {
                            ga[ia] += da;
                        }
                        if let Some(gb) = gb.as_mut() {
                            gb[ib] += db;
                        }
                    });
                    if let Some(ga) = ga {
                        self.accumulate(grads, *a, Tensor::from_parts(av.shape().to_vec(), ga));
                    }
                    if let Some(gb) = gb {
                        self.accumulate(grads, *b, Tensor::from_parts(bv.shape().to_vec(), gb));
                    }
                }
            }
            Op::Unary(kind, a) => {
                let x = self.value(*a).data();
                let data = match kind {
                    Unary::Sigmoid => parallel::zip_map(gd, out, |g, y| g * y * (1.0 - y)),
                    Unary::LeakyRelu => parallel::zip_map(gd, x, |g, x| {
                        if x > 0.0 {
                            g
                        } else {
                            g * LEAKY_SLOPE
                        }
                    }),
                    Unary::Elu => parallel::zip_map(gd, out, |g, y| if y > 0.0 { g } else { g * (y + 1.0) }),
                    Unary::Exp => parallel::zip_map(gd, out, |g, y| g * y),
                    Unary::Log => parallel::zip_map(gd, x, |g, x| g / x),
                    Unary::Cosh => parallel::zip_map(gd, x, |g, x| g * x.sinh()),
                };
                let t = Tensor::from_parts(node.value.shape().to_vec(), data);
                self.accumulate(grads, *a, t);
            }
            Op::ScalarMul(a, s) => {
                let s = *s;
                let t = Tensor::from_parts(g.shape().to_vec(), parallel::map(gd, |g| g * s));
                self.accumulate(grads, *a, t);
            }
            Op::AddScalar(a) => self.accumulate(grads, *a, g.clone()),
            Op::Softmax(a, ax) => {
                let mut data = vec![0.0; out.len()];
                for_axis_lanes(*ax, |idx| {
                    let dot: f64 = idx.clone().map(|i| gd[i] * out[i]).sum();
                    for i in idx {
                        data[i] = out[i] * (gd[i] - dot);
                    }
                });
                self.accumulate(grads, *a, Tensor::from_parts(g.shape().to_vec(), data));
            }
            Op::LogSoftmax(a, ax) => {
                let mut data = vec![0.0; out.len()];
                for_axis_lanes(*ax, |idx| {
                    let gsum: f64 = idx.clone().map(|i| gd[i]).sum();
                    for i in idx {
                        data[i] = gd[i] - out[i].exp() * gsum;
                    }
                });
                self.accumulate(grads, *a, Tensor::from_parts(g.shape().to_vec(), data));
            }
            Op::Sum(a) => {
                let t = Tensor::full(self.shape(*a), g.item());
                self.accumulate(grads, *a, t);
            }
            Op::Mean(a) => {
                let n = self.value(*a).len() as f64;
                let t = Tensor::full(self.shape(*a), g.item() / n);
                self.accumulate(grads, *a, t);
            }
            Op::SumAxis(a, ax) => {
                let mut data = vec![0.0; ax.outer * ax.len * ax.inner];
                for o in 0..ax.outer {
                    for l in 0..ax.len {
                        let base = (o * ax.len + l) * ax.inner;
                        data[base..base + ax.inner]
                            .copy_from_slice(&gd[o * ax.inner..(o + 1) * ax.inner]);
                    }
                }
                let t = Tensor::from_parts(self.shape(*a).to_vec(), data);
                self.accumulate(grads, *a, t);
            }
            Op::Concat(parts, ax) => {
                let mut offset = 0;
                for &p in parts {
                    let shape = self.shape(p).to_vec();
                    let width = self.value(p).len() / ax.outer.max(1) / ax.inner.max(1);
                    if self.needs(p) {
                        let blk = width * ax.inner;
                        let mut data = Vec::with_capacity(self.value(p).len());
                        for o in 0..ax.outer {
                            let start = o * ax.len * ax.inner + offset * ax.inner;
                            data.extend_from_slice(&gd[start..start + blk]);
                        }
                        self.accumulate(grads, p, Tensor::from_parts(shape, data));
                    }
                    offset += width;
                }
            }
            Op::Reshape(a) => {
                let t = Tensor::from_parts(self.shape(*a).to_vec(), gd.to_vec());
                self.accumulate(grads, *a, t);
            }
            Op::Gather(a, idx) => {
                let mut data = vec![0.0; self.value(*a).len()];
                for (k, i) in idx.iter().enumerate() {
                    if let Some(i) = *i {
                        data[i] += gd[k];
                    }
                }
                let t = Tensor::from_parts(self.shape(*a).to_vec(), data);
                self.accumulate(grads, *a, t);
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Applies `f(lane_values, lane_out)` to every lane along an axis.
fn axis_map(src: &[f64], ax: Axis, f: impl Fn(&[f64], &mut [f64])) -> Vec<f64> {
    let mut out = vec![0.0; src.len()];
    if ax.inner == 1 {
        for (s, o) in src.chunks(ax.len).zip(out.chunks_mut(ax.len)) {
            f(s, o);
        }
        return out;
    }
    let mut lane = vec![0.0; ax.len];
    let mut lane_out = vec![0.0; ax.len];
    for o in 0..ax.outer {
        for i in 0..ax.inner {
            for l in 0..ax.len {
                lane[l] = src[(o * ax.len + l) * ax.inner + i];
            }
            f(&lane, &mut lane_out);
            for l in 0..ax.len {
                out[(o * ax.len + l) * ax.inner + i] = lane_out[l];
            }
        }
    }
    out
}

/// Calls `f` with the flat indices of each lane along an axis.
fn for_axis_lanes(ax: Axis, mut f: impl FnMut(std::iter::StepBy<std::ops::Range<usize>>)) {
    for o in 0..ax.outer {
        for i in 0..ax.inner {
            let start = o * ax.len * ax.inner + i;
            f((start..start + ax.len * ax.inner).step_by(ax.inner));
        }
    }
}

/// `out[r, :] = a[r, :] @ b` for every row of `a`; `b` is `k x n`.
fn matmul_rows(a: &[f64], b: &[f64], out: &mut [f64], k: usize, n: usize) {
    let rows_per_chunk = (4096 / n.max(1)).max(1);
    parallel::for_each_chunk(out, rows_per_chunk * n, |ci, chunk| {
        let r0 = ci * rows_per_chunk;
        let rows = chunk.len() / n.max(1);
        matmul_block(&a[r0 * k..(r0 + rows) * k], b, chunk, k, n);
    });
}

/// Sequential `out = a @ b` with `a` of shape `rows x k`.
fn matmul_block(a: &[f64], b: &[f64], out: &mut [f64], k: usize, n: usize) {
    if n == 0 {
        return;
    }
    for (a_row, o_row) in a.chunks(k.max(1)).zip(out.chunks_mut(n)) {
        o_row.fill(0.0);
        for (kk, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let b_row = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in o_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// `out = g @ b^T` with `g` of shape `rows x n` and `b` of shape `k x n`.
fn matmul_rows_bt(g: &[f64], b: &[f64], out: &mut [f64], n: usize, k: usize) {
    let rows_per_chunk = (4096 / k.max(1)).max(1);
    let body = |ci: usize, chunk: &mut [f64]| {
        let r0 = ci * rows_per_chunk;
        for (r, o_row) in chunk.chunks_mut(k).enumerate() {
            let g_row = &g[(r0 + r) * n..(r0 + r + 1) * n];
            for (kk, o) in o_row.iter_mut().enumerate() {
                let b_row = &b[kk * n..(kk + 1) * n];
                *o = g_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
            }
        }
    };
    parallel::for_each_chunk(out, rows_per_chunk * k, body);
}

/// `out = a^T @ g` with `a` of shape `rows x k` and `g` of shape `rows x n`;
/// `out` is `k x n`. Each output row is summed over `rows` in order.
fn matmul_at_rows(a: &[f64], g: &[f64], out: &mut [f64], rows: usize, k: usize, n: usize) {
    if n == 0 {
        return;
    }
    parallel::for_each_chunk(out, n, |kk, o_row| {
        o_row.fill(0.0);
        for r in 0..rows {
            let av = a[r * k + kk];
            if av == 0.0 {
                continue;
            }
            let g_row = &g[r * n..(r + 1) * n];
            for (o, &gv) in o_row.iter_mut().zip(g_row) {
                *o += av * gv;
            }
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn sigmoid_of_zero_is_half() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[1], &[0.0]));
        let s = tape.sigmoid(x);
        assert_eq!(tape.value(s).data(), &[0.5]);
        let l = tape.sum(s);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.25]);
    }

    #[test]
    fn softmax_uniform() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[2], &[0.0, 0.0]));
        let s = tape.softmax(x, 0).unwrap();
        assert_eq!(tape.value(s).data(), &[0.5, 0.5]);
    }

    #[test]
    fn identity_matmul() {
        let mut tape = Tape::new();
        let a_data: Vec<f64> = (0..9).map(|v| v as f64 - 3.5).collect();
        let i = tape.constant(Tensor::identity(3));
        let a = tape.constant(t(&[3, 3], &a_data));
        let p = tape.matmul(i, a).unwrap();
        assert_eq!(tape.value(p).data(), &a_data[..]);
    }

    #[test]
    fn square_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(3.0));
        let y = tape.mul(x, x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().item(), 6.0);
    }

    #[test]
    fn shape_errors_name_the_operation() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        let err = tape.matmul(a, b).unwrap_err();
        assert!(err.to_string().contains("matmul"), "{err}");
        assert!(err.to_string().contains("[2, 3]"), "{err}");
        let c = tape.constant(Tensor::zeros(&[3, 2]));
        assert!(tape.add(a, c).unwrap_err().to_string().contains("add"));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let a = tape.param(Tensor::zeros(&[2]));
        assert!(matches!(tape.backward(a), Err(Error::Contract(_))));
    }

    #[test]
    fn broadcast_add_sums_gradient_over_expanded_dims() {
        let mut tape = Tape::new();
        let a = tape.param(Tensor::zeros(&[2, 3]));
        let b = tape.param(t(&[1, 3], &[1.0, 2.0, 3.0]));
        let c = tape.add(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
        let l = tape.sum(c);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(b).unwrap().data(), &[2.0, 2.0, 2.0]);
        assert_eq!(g.get(a).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn outer_broadcast() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[2, 1], &[1.0, 2.0]));
        let b = tape.constant(t(&[1, 3], &[10.0, 20.0, 30.0]));
        let c = tape.add(a, b).unwrap();
        assert_eq!(tape.shape(c), &[2, 3]);
        assert_eq!(tape.value(c).data(), &[11.0, 21.0, 31.0, 12.0, 22.0, 32.0]);
    }

    #[test]
    fn concat_middle_axis() {
        let mut tape = Tape::new();
        let a = tape.param(t(&[2, 1, 2], &[1.0, 2.0, 3.0, 4.0]));
        let b = tape.param(t(&[2, 2, 2], &[5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 11.0, 12.0]));
        let c = tape.concat(&[a, b], 1).unwrap();
        assert_eq!(tape.shape(c), &[2, 3, 2]);
        assert_eq!(
            tape.value(c).data(),
            &[1.0, 2.0, 5.0, 6.0, 7.0, 8.0, 3.0, 4.0, 9.0, 10.0, 11.0, 12.0]
        );
        let w = tape.constant(t(&[2, 3, 2], &(0..12).map(|v| v as f64).collect::<Vec<_>>()));
        let p = tape.mul(c, w).unwrap();
        let l = tape.sum(p);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(a).unwrap().data(), &[0.0, 1.0, 6.0, 7.0]);
        assert_eq!(g.get(b).unwrap().data(), &[2.0, 3.0, 4.0, 5.0, 8.0, 9.0, 10.0, 11.0]);
    }

    #[test]
    fn gather_scatters_gradient() {
        let mut tape = Tape::new();
        let a = tape.param(t(&[3], &[1.0, 2.0, 3.0]));
        let g = tape
            .gather(a, vec![Some(2), None, Some(2), Some(0)], &[2, 2])
            .unwrap();
        assert_eq!(tape.value(g).data(), &[3.0, 0.0, 3.0, 1.0]);
        let l = tape.sum(g);
        let grads = tape.backward(l).unwrap();
        assert_eq!(grads.get(a).unwrap().data(), &[1.0, 0.0, 2.0]);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::scalar(2.0));
        let b = tape.param(Tensor::scalar(5.0));
        let c = tape.mul(a, b).unwrap();
        let g = tape.backward(c).unwrap();
        assert!(g.get(a).is_none());
        assert_eq!(g.get(b).unwrap().item(), 2.0);
    }
}
