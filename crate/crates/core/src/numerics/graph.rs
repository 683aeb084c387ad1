use std::borrow::Cow;

use super::{RngState, Tensor};
use crate::{Error, Result};

/// Probability floor inside [`Graph::nll`].
pub const NLL_FLOOR: f64 = 1e-12;

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MulConst(Var, Vec<f64>),
    Sigmoid(Var),
    Tanh(Var),
    Softmax(Var),
    Concat {
        parts: Vec<Var>,
        outer: usize,
        widths: Vec<usize>,
    },
    SliceRows {
        x: Var,
        offset: usize,
    },
    Reshape(Var),
    GatherSum {
        table: Var,
        groups: Vec<Vec<usize>>,
        width: usize,
    },
    SumRows {
        x: Var,
        rows: usize,
        width: usize,
    },
    Sum(Var),
    Nll {
        p: Var,
        target: usize,
    },
}

struct Node<'a> {
    value: Cow<'a, [f64]>,
    shape: Vec<usize>,
    op: Op,
    requires_grad: bool,
}

/// A single-use tape of recorded operations.
///
/// Leaves registered with [`Graph::param`] borrow their tensor's data, so
/// building a graph over large embedding tables does not copy them.
pub struct Graph<'a> {
    nodes: Vec<Node<'a>>,
}

/// Gradients produced by [`Graph::backward`], indexed by leaf [`Var`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of a leaf; `None` when the leaf was unreachable from the loss
    /// or does not require gradients.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a> Graph<'a> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::with_capacity(256),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    /// Scalar value of a one-element node.
    pub fn item(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        Tensor::new(
            self.nodes[v.0].shape.clone(),
            self.nodes[v.0].value.to_vec(),
        )
        .expect("node shape is consistent")
    }

    fn push(
        &mut self,
        value: Cow<'a, [f64]>,
        shape: Vec<usize>,
        op: Op,
        requires_grad: bool,
    ) -> Var {
        debug_assert_eq!(value.len(), shape.iter().product::<usize>());
        self.nodes.push(Node {
            value,
            shape,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Registers a borrowed tensor as a leaf. Gradient tracking follows
    /// `tensor.requires_grad()`.
    pub fn param(&mut self, tensor: &'a Tensor) -> Var {
        self.push(
            Cow::Borrowed(tensor.data()),
            tensor.shape().to_vec(),
            Op::Leaf,
            tensor.requires_grad(),
        )
    }

    /// Registers an owned value as a leaf.
    pub fn input(
        &mut self,
        shape: impl Into<Vec<usize>>,
        data: Vec<f64>,
        requires_grad: bool,
    ) -> Result<Var> {
        let shape = shape.into();
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::dim("input", &shape, &[data.len()]));
        }
        Ok(self.push(Cow::Owned(data), shape, Op::Leaf, requires_grad))
    }

    /// Constant 1-D leaf.
    pub fn constant(&mut self, data: Vec<f64>) -> Var {
        let n = data.len();
        self.push(Cow::Owned(data), vec![n], Op::Leaf, false)
    }

    pub fn zeros(&mut self, n: usize) -> Var {
        self.constant(vec![0.0; n])
    }

    /// Matrix product with numpy-style promotion of 1-D operands: a 1-D left
    /// operand is a row vector, a 1-D right operand is a column vector, and the
    /// promoted axes are dropped from the result.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let (m, k, a_vec) = match sa.as_slice() {
            [k] => (1, *k, true),
            [m, k] => (*m, *k, false),
            _ => return Err(Error::dim("matmul", &sa, &sb)),
        };
        let (k2, n, b_vec) = match sb.as_slice() {
            [k] => (*k, 1, true),
            [k, n] => (*k, *n, false),
            _ => return Err(Error::dim("matmul", &sa, &sb)),
        };
        if k != k2 {
            return Err(Error::dim("matmul", &sa, &sb));
        }
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let x = av[i * k + p];
                if x == 0.0 {
                    continue;
                }
                let brow = &bv[p * n..(p + 1) * n];
                for (o, bj) in row.iter_mut().zip(brow) {
                    *o += x * bj;
                }
            }
        }
        let mut shape = Vec::new();
        if !a_vec {
            shape.push(m);
        }
        if !b_vec {
            shape.push(n);
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Cow::Owned(out), shape, Op::MatMul { a, b, m, k, n }, rg))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let out: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| f(*x, *y))
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a) || self.rg(b);
        self.push(Cow::Owned(out), shape, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip_with(a, b, |x, y| x + y, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip_with(a, b, |x, y| x - y, Op::Sub(a, b)))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip_with(a, b, |x, y| x * y, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).iter().map(|v| v * c).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        self.push(Cow::Owned(out), shape, Op::Scale(x, c), rg)
    }

    /// Elementwise product with a constant of the same length.
    pub fn mul_const(&mut self, x: Var, c: Vec<f64>) -> Result<Var> {
        if c.len() != self.value(x).len() {
            return Err(Error::dim("mul_const", self.shape(x), &[c.len()]));
        }
        let out = self.value(x).iter().zip(&c).map(|(v, m)| v * m).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        Ok(self.push(Cow::Owned(out), shape, Op::MulConst(x, c), rg))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|&v| sigmoid(v)).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        self.push(Cow::Owned(out), shape, Op::Sigmoid(x), rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|v| v.tanh()).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        self.push(Cow::Owned(out), shape, Op::Tanh(x), rg)
    }

    /// Softmax over a 1-D tensor.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        self.masked_softmax(x, None)
    }

    /// Softmax restricted to positions where `mask` is true. Masked positions
    /// receive exactly zero probability.
    pub fn masked_softmax(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 1 {
            return Err(Error::dim("masked_softmax", &shape, &[]));
        }
        if let Some(m) = mask {
            if m.len() != shape[0] {
                return Err(Error::dim("masked_softmax", &shape, &[m.len()]));
            }
        }
        let out = masked_softmax_values(self.value(x), mask)?;
        let rg = self.rg(x);
        Ok(self.push(Cow::Owned(out), shape, Op::Softmax(x), rg))
    }

    /// Concatenation along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .shape(
                *parts
                    .first()
                    .ok_or_else(|| Error::Config("concat of nothing".into()))?,
            )
            .to_vec();
        if axis >= first.len() {
            return Err(Error::dim("concat", &first, &[axis]));
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut widths = Vec::with_capacity(parts.len());
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != first.len()
                || s[..axis] != first[..axis]
                || s[axis + 1..] != first[axis + 1..]
            {
                return Err(Error::dim("concat", &first, s));
            }
            widths.push(s[axis] * inner);
            total += s[axis];
        }
        let row: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(outer * row);
        for o in 0..outer {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p)[o * w..(o + 1) * w]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            Cow::Owned(out),
            shape,
            Op::Concat {
                parts: parts.to_vec(),
                outer,
                widths,
            },
            rg,
        ))
    }

    /// Rows `start..start + len` along the first axis.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.is_empty() || start + len > shape[0] {
            return Err(Error::dim("slice_rows", &shape, &[start, len]));
        }
        let inner: usize = shape[1..].iter().product();
        let out = self.value(x)[start * inner..(start + len) * inner].to_vec();
        let mut new_shape = shape;
        new_shape[0] = len;
        let rg = self.rg(x);
        Ok(self.push(
            Cow::Owned(out),
            new_shape,
            Op::SliceRows {
                x,
                offset: start * inner,
            },
            rg,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let shape = shape.into();
        if shape.iter().product::<usize>() != self.value(x).len() {
            return Err(Error::dim("reshape", self.shape(x), &shape));
        }
        let out = self.value(x).to_vec();
        let rg = self.rg(x);
        Ok(self.push(Cow::Owned(out), shape, Op::Reshape(x), rg))
    }

    /// Row `index` of a 2-D embedding table.
    pub fn embedding_lookup(&mut self, table: Var, index: usize) -> Result<Var> {
        let e = self.gather_sum(table, vec![vec![index]])?;
        let d = self.shape(table)[1];
        self.reshape(e, [d])
    }

    /// For each group of row indices, the sum of those table rows; output
    /// shape `[groups, d]`.
    pub fn gather_sum(&mut self, table: Var, groups: Vec<Vec<usize>>) -> Result<Var> {
        let shape = self.shape(table).to_vec();
        let [rows, width] = shape[..] else {
            return Err(Error::dim("gather_sum", &shape, &[]));
        };
        let tv = self.value(table);
        let mut out = vec![0.0; groups.len() * width];
        for (g, idxs) in groups.iter().enumerate() {
            let dst = &mut out[g * width..(g + 1) * width];
            for &i in idxs {
                if i >= rows {
                    return Err(Error::Index {
                        index: i,
                        len: rows,
                    });
                }
                for (d, s) in dst.iter_mut().zip(&tv[i * width..(i + 1) * width]) {
                    *d += s;
                }
            }
        }
        let n = groups.len();
        let rg = self.rg(table);
        Ok(self.push(
            Cow::Owned(out),
            vec![n, width],
            Op::GatherSum {
                table,
                groups,
                width,
            },
            rg,
        ))
    }

    /// Sum over the first axis of a 2-D tensor.
    pub fn sum_rows(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let [rows, width] = shape[..] else {
            return Err(Error::dim("sum_rows", &shape, &[]));
        };
        let xv = self.value(x);
        let mut out = vec![0.0; width];
        for r in 0..rows {
            for (o, v) in out.iter_mut().zip(&xv[r * width..(r + 1) * width]) {
                *o += v;
            }
        }
        let rg = self.rg(x);
        Ok(self.push(
            Cow::Owned(out),
            vec![width],
            Op::SumRows { x, rows, width },
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        let rg = self.rg(x);
        self.push(Cow::Owned(vec![s]), vec![], Op::Sum(x), rg)
    }

    /// Sum of several same-shape values.
    pub fn add_all(&mut self, xs: &[Var]) -> Result<Var> {
        let mut acc = *xs
            .first()
            .ok_or_else(|| Error::Config("add_all of nothing".into()))?;
        for &x in &xs[1..] {
            acc = self.add(acc, x)?;
        }
        Ok(acc)
    }

    /// `-ln(max(p[target], 1e-12))` for a probability vector `p`.
    pub fn nll(&mut self, p: Var, target: usize) -> Result<Var> {
        let n = self.value(p).len();
        if target >= n {
            return Err(Error::Index {
                index: target,
                len: n,
            });
        }
        let v = -self.value(p)[target].max(NLL_FLOOR).ln();
        let rg = self.rg(p);
        Ok(self.push(Cow::Owned(vec![v]), vec![], Op::Nll { p, target }, rg))
    }

    /// Inverted dropout: in training mode each element is zeroed with
    /// probability `rate` and survivors are scaled by `1 / (1 - rate)`.
    pub fn dropout(
        &mut self,
        x: Var,
        rate: f64,
        training: bool,
        rng: &mut RngState,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let mask = (0..self.value(x).len())
            .map(|_| if rng.uniform() < rate { 0.0 } else { keep })
            .collect();
        self.mul_const(x, mask)
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let root = &self.nodes[loss.0];
        if root.value.len() != 1 {
            return Err(Error::NotScalar(root.shape.clone()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if !root.requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) || !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let n = self.nodes[v.0].value.len();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
    }

    fn propagate(&self, node: &Node<'_>, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul { a, b, m, k, n } => {
                let (av, bv) = (self.value(a), self.value(b));
                if let Some(ga) = self.slot(grads, a) {
                    for i in 0..m {
                        let gi = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bv[p * n..(p + 1) * n];
                            ga[i * k + p] += dot(gi, brow);
                        }
                    }
                }
                if let Some(gb) = self.slot(grads, b) {
                    for i in 0..m {
                        let gi = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let x = av[i * k + p];
                            if x == 0.0 {
                                continue;
                            }
                            for (d, gv) in gb[p * n..(p + 1) * n].iter_mut().zip(gi) {
                                *d += x * gv;
                            }
                        }
                    }
                }
            }
            &Op::Add(a, b) => {
                if let Some(ga) = self.slot(grads, a) {
                    axpy(ga, 1.0, g);
                }
                if let Some(gb) = self.slot(grads, b) {
                    axpy(gb, 1.0, g);
                }
            }
            &Op::Sub(a, b) => {
                if let Some(ga) = self.slot(grads, a) {
                    axpy(ga, 1.0, g);
                }
                if let Some(gb) = self.slot(grads, b) {
                    axpy(gb, -1.0, g);
                }
            }
            &Op::Mul(a, b) => {
                let (av, bv) = (self.value(a), self.value(b));
                if let Some(ga) = self.slot(grads, a) {
                    for ((d, gv), y) in ga.iter_mut().zip(g).zip(bv) {
                        *d += gv * y;
                    }
                }
                if let Some(gb) = self.slot(grads, b) {
                    for ((d, gv), x) in gb.iter_mut().zip(g).zip(av) {
                        *d += gv * x;
                    }
                }
            }
            &Op::Scale(x, c) => {
                if let Some(gx) = self.slot(grads, x) {
                    axpy(gx, c, g);
                }
            }
            Op::MulConst(x, c) => {
                if let Some(gx) = self.slot(grads, *x) {
                    for ((d, gv), m) in gx.iter_mut().zip(g).zip(c) {
                        *d += gv * m;
                    }
                }
            }
            &Op::Sigmoid(x) => {
                if let Some(gx) = self.slot(grads, x) {
                    for ((d, gv), s) in gx.iter_mut().zip(g).zip(out.iter()) {
                        *d += gv * s * (1.0 - s);
                    }
                }
            }
            &Op::Tanh(x) => {
                if let Some(gx) = self.slot(grads, x) {
                    for ((d, gv), t) in gx.iter_mut().zip(g).zip(out.iter()) {
                        *d += gv * (1.0 - t * t);
                    }
                }
            }
            &Op::Softmax(x) => {
                if let Some(gx) = self.slot(grads, x) {
                    let inner = dot(g, out);
                    for ((d, gv), y) in gx.iter_mut().zip(g).zip(out.iter()) {
                        *d += y * (gv - inner);
                    }
                }
            }
            Op::Concat {
                parts,
                outer,
                widths,
            } => {
                let row: usize = widths.iter().sum();
                let mut off = 0;
                for (&p, &w) in parts.iter().zip(widths) {
                    if let Some(gp) = self.slot(grads, p) {
                        for o in 0..*outer {
                            axpy(
                                &mut gp[o * w..(o + 1) * w],
                                1.0,
                                &g[o * row + off..o * row + off + w],
                            );
                        }
                    }
                    off += w;
                }
            }
            &Op::SliceRows { x, offset } => {
                if let Some(gx) = self.slot(grads, x) {
                    axpy(&mut gx[offset..offset + g.len()], 1.0, g);
                }
            }
            &Op::Reshape(x) => {
                if let Some(gx) = self.slot(grads, x) {
                    axpy(gx, 1.0, g);
                }
            }
            Op::GatherSum {
                table,
                groups,
                width,
            } => {
                let w = *width;
                if let Some(gt) = self.slot(grads, *table) {
                    for (r, idxs) in groups.iter().enumerate() {
                        let src = &g[r * w..(r + 1) * w];
                        for &i in idxs {
                            axpy(&mut gt[i * w..(i + 1) * w], 1.0, src);
                        }
                    }
                }
            }
            &Op::SumRows { x, rows, width } => {
                if let Some(gx) = self.slot(grads, x) {
                    for r in 0..rows {
                        axpy(&mut gx[r * width..(r + 1) * width], 1.0, g);
                    }
                }
            }
            &Op::Sum(x) => {
                if let Some(gx) = self.slot(grads, x) {
                    gx.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            &Op::Nll { p, target } => {
                let pt = self.value(p)[target];
                if let Some(gp) = self.slot(grads, p) {
                    if pt > NLL_FLOOR {
                        gp[target] -= g[0] / pt;
                    }
                }
            }
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Softmax over `logits` restricted to `mask` (all positions when `None`).
/// Masked logits are pushed to a large negative surrogate before
/// stabilisation and their outputs are forced to exactly zero.
pub(crate) fn masked_softmax_values(logits: &[f64], mask: Option<&[bool]>) -> Result<Vec<f64>> {
    const MASKED: f64 = -1e30;
    let on = |i: usize| mask.is_none_or(|m| m[i]);
    if !(0..logits.len()).any(on) {
        return Err(Error::AllMasked);
    }
    let shifted: Vec<f64> = logits
        .iter()
        .enumerate()
        .map(|(i, &x)| if on(i) { x } else { MASKED })
        .collect();
    let max = shifted.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = shifted
        .iter()
        .enumerate()
        .map(|(i, &x)| if on(i) { (x - max).exp() } else { 0.0 })
        .collect();
    let z: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= z);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_tensor(shape: &[usize], rng: &mut RngState) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.normal()).collect())
            .unwrap()
            .requiring_grad()
    }

    /// Central finite differences of `f` with respect to every entry of each
    /// tensor in `params`, compared against the tape gradient.
    fn max_rel_err(params: &mut [Tensor], f: impl Fn(&mut Graph, &[Var]) -> Var) -> f64 {
        let analytic: Vec<Vec<f64>> = {
            let mut g = Graph::new();
            let vars: Vec<Var> = params.iter().map(|t| g.param(t)).collect();
            let loss = f(&mut g, &vars);
            let grads = g.backward(loss).unwrap();
            vars.iter()
                .map(|&v| grads.get(v).map(|x| x.to_vec()).unwrap_or_default())
                .collect()
        };
        let eval = |params: &[Tensor]| {
            let mut g = Graph::new();
            let vars: Vec<Var> = params.iter().map(|t| g.param(t)).collect();
            let loss = f(&mut g, &vars);
            g.item(loss)
        };
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for t in 0..params.len() {
            for i in 0..params[t].len() {
                let orig = params[t].data()[i];
                params[t].data_mut()[i] = orig + h;
                let up = eval(params);
                params[t].data_mut()[i] = orig - h;
                let down = eval(params);
                params[t].data_mut()[i] = orig;
                let numeric = (up - down) / (2.0 * h);
                let a = analytic[t][i];
                let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
                worst = worst.max(err);
            }
        }
        worst
    }

    #[test]
    fn matmul_identity_and_scalar() {
        let mut g = Graph::new();
        let i2 = g.input([2, 2], vec![1.0, 0.0, 0.0, 1.0], false).unwrap();
        let col = g.input([2, 1], vec![3.0, 4.0], false).unwrap();
        let out = g.matmul(i2, col).unwrap();
        assert_eq!(g.shape(out), &[2, 1]);
        assert_eq!(g.value(out), &[3.0, 4.0]);

        let a = g.input([1, 1], vec![2.0], false).unwrap();
        let b = g.input([1, 1], vec![3.0], false).unwrap();
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c), &[6.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut g = Graph::new();
        let a = g.input([2, 3], vec![0.0; 6], false).unwrap();
        let b = g.input([2, 2], vec![0.0; 4], false).unwrap();
        match g.matmul(a, b) {
            Err(Error::Dimension { lhs, rhs, .. }) => {
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![2, 2]);
            }
            other => panic!("expected dimension error, got {other:?}"),
        }
    }

    #[test]
    fn matmul_gradient_matches_finite_differences() {
        let mut rng = RngState::new(11);
        let mut ps = vec![
            random_tensor(&[4, 3], &mut rng),
            random_tensor(&[3, 2], &mut rng),
        ];
        let err = max_rel_err(&mut ps, |g, v| {
            let c = g.matmul(v[0], v[1]).unwrap();
            g.sum(c)
        });
        assert!(err <= 1e-6, "max relative error {err}");
    }

    #[test]
    fn vector_promotion_in_matmul() {
        let mut rng = RngState::new(12);
        let mut ps = vec![
            random_tensor(&[3], &mut rng),
            random_tensor(&[3, 4], &mut rng),
            random_tensor(&[4], &mut rng),
        ];
        let err = max_rel_err(&mut ps, |g, v| {
            let row = g.matmul(v[0], v[1]).unwrap();
            let t = g.tanh(row);
            g.matmul(t, v[2]).unwrap()
        });
        assert!(err <= 1e-6, "max relative error {err}");
    }

    #[test]
    fn masked_softmax_examples() {
        let mut g = Graph::new();
        let x = g.constant(vec![0.0, 0.0]);
        let p = g.softmax(x).unwrap();
        assert_eq!(g.value(p), &[0.5, 0.5]);

        let x = g.constant(vec![5.0, 100.0]);
        let p = g.masked_softmax(x, Some(&[true, false])).unwrap();
        assert_eq!(g.value(p), &[1.0, 0.0]);

        let x = g.constant(vec![1.0, 2.0, 3.0]);
        let p = g.softmax(x).unwrap();
        let z = 1f64.exp() + 2f64.exp() + 3f64.exp();
        let direct = [1f64.exp() / z, 2f64.exp() / z, 3f64.exp() / z];
        for (a, b) in g.value(p).iter().zip(direct) {
            assert!((a - b).abs() <= 1e-12);
        }

        let x = g.constant(vec![1.0, 2.0]);
        assert!(matches!(
            g.masked_softmax(x, Some(&[false, false])),
            Err(Error::AllMasked)
        ));
    }

    #[test]
    fn softmax_gradient_matches_finite_differences() {
        let mut rng = RngState::new(13);
        let mut ps = vec![random_tensor(&[5], &mut rng), random_tensor(&[5], &mut rng)];
        let err = max_rel_err(&mut ps, |g, v| {
            let p = g
                .masked_softmax(v[0], Some(&[true, false, true, true, false]))
                .unwrap();
            let w = g.mul(p, v[1]).unwrap();
            g.sum(w)
        });
        assert!(err <= 1e-6, "max relative error {err}");
    }

    #[test]
    fn elementwise_examples() {
        let mut g = Graph::new();
        let z = g.constant(vec![0.0]);
        let s = g.sigmoid(z);
        let t = g.tanh(z);
        assert_eq!(g.value(s), &[0.5]);
        assert_eq!(g.value(t), &[0.0]);
        let a = g.constant(vec![1.0, 2.0]);
        let b = g.constant(vec![0.0, 0.0]);
        let m = g.mul(a, b).unwrap();
        assert_eq!(g.value(m), &[0.0, 0.0]);
        let c = g.constant(vec![1.0, 2.0, 3.0]);
        assert!(matches!(g.add(a, c), Err(Error::Dimension { .. })));
    }

    #[test]
    fn elementwise_gradients_match_finite_differences() {
        let mut rng = RngState::new(14);
        let mut ps = vec![
            random_tensor(&[4], &mut rng),
            random_tensor(&[4], &mut rng),
            random_tensor(&[2, 4], &mut rng),
        ];
        let err = max_rel_err(&mut ps, |g, v| {
            let s = g.sigmoid(v[0]);
            let t = g.tanh(v[1]);
            let m = g.mul(s, t).unwrap();
            let d = g.sub(m, v[0]).unwrap();
            let d = g.scale(d, 0.7);
            let row0 = g.slice_rows(v[2], 1, 1).unwrap();
            let row0 = g.reshape(row0, [4]).unwrap();
            let a = g.add(d, row0).unwrap();
            let cat = g.concat(&[a, v[1]], 0).unwrap();
            let cat = g
                .mul_const(cat, vec![1.0, 2.0, 0.0, 1.0, 0.5, 1.0, 1.0, 3.0])
                .unwrap();
            let sq = g.mul(cat, cat).unwrap();
            let rows = g.sum_rows(v[2]).unwrap();
            let rs = g.sum(rows);
            let total = g.sum(sq);
            g.add(total, rs).unwrap()
        });
        assert!(err <= 1e-6, "max relative error {err}");
    }

    #[test]
    fn concat_along_axis_one() {
        let mut g = Graph::new();
        let a = g.input([2, 1], vec![1.0, 2.0], false).unwrap();
        let b = g.input([2, 2], vec![3.0, 4.0, 5.0, 6.0], false).unwrap();
        let c = g.concat(&[a, b], 1).unwrap();
        assert_eq!(g.shape(c), &[2, 3]);
        assert_eq!(g.value(c), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
    }

    #[test]
    fn embedding_lookup_examples() {
        let eye = Tensor::new([3, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0])
            .unwrap()
            .requiring_grad();
        let mut g = Graph::new();
        let t = g.param(&eye);
        let row = g.embedding_lookup(t, 1).unwrap();
        assert_eq!(g.value(row), &[0.0, 1.0, 0.0]);
        assert!(matches!(
            g.embedding_lookup(t, 3),
            Err(Error::Index { index: 3, len: 3 })
        ));

        // two lookups of the same row accumulate
        let r2 = g.embedding_lookup(t, 1).unwrap();
        let w1 = g.constant(vec![1.0, 2.0, 3.0]);
        let w2 = g.constant(vec![10.0, 20.0, 30.0]);
        let a = g.mul(row, w1).unwrap();
        let b = g.mul(r2, w2).unwrap();
        let s = g.add(a, b).unwrap();
        let loss = g.sum(s);
        let grads = g.backward(loss).unwrap();
        assert_eq!(
            grads.get(t).unwrap(),
            &[0.0, 0.0, 0.0, 11.0, 22.0, 33.0, 0.0, 0.0, 0.0]
        );
    }

    #[test]
    fn embedding_lookup_gradient_matches_finite_differences() {
        let mut rng = RngState::new(15);
        let mut ps = vec![
            random_tensor(&[5, 3], &mut rng),
            random_tensor(&[3], &mut rng),
        ];
        let err = max_rel_err(&mut ps, |g, v| {
            let e = g.embedding_lookup(v[0], 2).unwrap();
            let m = g.gather_sum(v[0], vec![vec![0, 2], vec![4]]).unwrap();
            let m = g.matmul(m, v[1]).unwrap();
            let s = g.sigmoid(m);
            let p = g.mul(e, v[1]).unwrap();
            let t = g.tanh(p);
            let a = g.sum(t);
            let b = g.sum(s);
            g.add(a, b).unwrap()
        });
        assert!(err <= 1e-6, "max relative error {err}");
    }

    #[test]
    fn dropout_behaviour() {
        let mut rng = RngState::new(16);
        let mut g = Graph::new();
        let x = g.constant(vec![1.5; 8]);
        let same = g.dropout(x, 0.0, true, &mut rng).unwrap();
        assert_eq!(g.value(same), g.value(x));
        let eval = g.dropout(x, 0.4, false, &mut rng).unwrap();
        assert_eq!(g.value(eval), g.value(x));
        assert!(matches!(
            g.dropout(x, 1.0, true, &mut rng),
            Err(Error::Config(_))
        ));

        let n = 100_000;
        let big = g.constant(vec![1.0; n]);
        let d = g.dropout(big, 0.4, true, &mut rng).unwrap();
        let survivors = g.value(d).iter().filter(|&&v| v != 0.0).count() as f64 / n as f64;
        assert!(
            (survivors - 0.6).abs() <= 0.01,
            "survivor fraction {survivors}"
        );
        let scaled = g.value(d).iter().find(|&&v| v != 0.0).unwrap();
        assert!((scaled - 1.0 / 0.6).abs() < 1e-12);
    }

    #[test]
    fn dropout_is_seed_reproducible() {
        let run = || {
            let mut rng = RngState::new(99);
            let mut g = Graph::new();
            let x = g.constant(vec![1.0; 64]);
            let d = g.dropout(x, 0.4, true, &mut rng).unwrap();
            g.value(d).to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn backward_examples() {
        let x = Tensor::scalar(3.0).requiring_grad();
        let unused = Tensor::from_vec(vec![1.0, 2.0]).requiring_grad();
        let mut g = Graph::new();
        let xv = g.param(&x);
        let uv = g.param(&unused);
        let sq = g.mul(xv, xv).unwrap();
        let grads = g.backward(sq).unwrap();
        assert_eq!(grads.get(xv), Some(&[6.0][..]));
        assert!(grads.get(uv).is_none_or(|g| g.iter().all(|&v| v == 0.0)));

        let v = g.constant(vec![1.0, 2.0]);
        assert!(matches!(g.backward(v), Err(Error::NotScalar(_))));
    }

    #[test]
    fn sigmoid_of_linear_map_gradient() {
        let mut rng = RngState::new(17);
        let mut ps = vec![
            random_tensor(&[3, 4], &mut rng),
            random_tensor(&[4], &mut rng),
        ];
        let err = max_rel_err(&mut ps, |g, v| {
            let wx = g.matmul(v[0], v[1]).unwrap();
            let s = g.sigmoid(wx);
            g.sum(s)
        });
        assert!(err <= 1e-6, "max relative error {err}");
    }

    #[test]
    fn nll_floor_and_gradient() {
        let mut g = Graph::new();
        let p = g.constant(vec![0.0, 1.0]);
        let l = g.nll(p, 0).unwrap();
        assert!((g.item(l) - (-(1e-12f64).ln())).abs() < 1e-9);
        let l = g.nll(p, 1).unwrap();
        assert_eq!(g.item(l), 0.0);
        assert!(g.nll(p, 2).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn masked_softmax_is_a_distribution(
                logits in proptest::collection::vec(-50.0f64..50.0, 1..20),
                seed in any::<u64>(),
            ) {
                let mut rng = RngState::new(seed);
                let mut mask: Vec<bool> = logits.iter().map(|_| rng.bernoulli(0.6)).collect();
                let keep = rng.below(mask.len());
                mask[keep] = true;
                let p = masked_softmax_values(&logits, Some(&mask)).unwrap();
                let s: f64 = p.iter().sum();
                prop_assert!((s - 1.0).abs() <= 1e-12);
                for (pi, m) in p.iter().zip(&mask) {
                    prop_assert!(*pi >= 0.0);
                    if !m { prop_assert_eq!(*pi, 0.0); }
                }
            }
        }
    }
}
