use std::ops::Range;

use rand::Rng;

use super::{gemm, Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<R> {
    Leaf,
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, R),
    AddRow(Var, Var),
    Relu(Var),
    Softmax(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, normed: Vec<R>, inv_std: Vec<R> },
    Dropout { x: Var, keep: Vec<R> },
    Slice { x: Var, rows: Range<usize>, cols: Range<usize> },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GroupMean { x: Var, groups: Vec<Vec<usize>> },
    Sum(Var),
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<R> },
}

struct Node<R> {
    value: Tensor<R>,
    op: Op<R>,
    requires_grad: bool,
}

/// Append-only record of executed operations.
///
/// Nodes are stored in execution order, which is a topological order of the
/// computation graph, so `backward` is a single reverse sweep.
pub struct Tape<R> {
    nodes: Vec<Node<R>>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients<R> {
    grads: Vec<Option<Tensor<R>>>,
}

impl<R: Real> Gradients<R> {
    pub fn get(&self, var: Var) -> Option<&Tensor<R>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<R>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

fn mismatch(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Error {
    Error::ShapeMismatch { op, lhs: lhs.to_vec(), rhs: rhs.to_vec() }
}

impl<R: Real> Default for Tape<R> {
    fn default() -> Self {
        Self::new()
    }
}

impl<R: Real> Tape<R> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<R> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<R>, op: Op<R>, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, value: Tensor<R>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<R>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    /// `a · b` where `b` is a matrix and `a` is a stack of rows.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if bv.shape().len() != 2 || av.cols() != bv.shape()[0] {
            return Err(mismatch("matmul", av.shape(), bv.shape()));
        }
        let (m, k, n) = (av.rows(), av.cols(), bv.cols());
        let mut out = vec![R::zero(); m * n];
        gemm::nn(av.values(), bv.values(), &mut out, m, k, n);
        let mut shape = av.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        Ok(self.push(Tensor::new(shape, out)?, Op::MatMul(a, b), &[a, b]))
    }

    /// `a · bᵀ` for two row stacks of equal width.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.cols() {
            return Err(mismatch("matmul_nt", av.shape(), bv.shape()));
        }
        let (m, k, n) = (av.rows(), av.cols(), bv.rows());
        let mut out = vec![R::zero(); m * n];
        gemm::nt(av.values(), bv.values(), &mut out, m, k, n);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMulNT(a, b), &[a, b]))
    }

    fn zip_same(&self, op: &'static str, a: Var, b: Var, f: impl Fn(R, R) -> R) -> Result<Tensor<R>> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(mismatch(op, av.shape(), bv.shape()));
        }
        let values = av.values().iter().zip(bv.values()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(av.shape().to_vec(), values)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("add", a, b, |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("mul", a, b, |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: R) -> Var {
        let out = self.value(a).map(|v| v * c);
        self.push(out, Op::Scale(a, c), &[a])
    }

    /// Adds the vector `v` to every row of `x`.
    pub fn add_row(&mut self, x: Var, v: Var) -> Result<Var> {
        let (xv, vv) = (self.value(x), self.value(v));
        if xv.cols() != vv.len() {
            return Err(mismatch("add_row", xv.shape(), vv.shape()));
        }
        let c = xv.cols();
        let values = xv
            .values()
            .iter()
            .enumerate()
            .map(|(i, &a)| a + vv.values()[i % c])
            .collect();
        let out = Tensor::new(xv.shape().to_vec(), values)?;
        Ok(self.push(out, Op::AddRow(x, v), &[x, v]))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(R::zero()));
        self.push(out, Op::Relu(x), &[x])
    }

    /// Row-wise softmax. With a column mask, `false` columns get exactly zero
    /// weight and the remaining columns are normalized among themselves.
    pub fn softmax(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let xv = self.value(x);
        let c = xv.cols();
        if let Some(m) = mask {
            if m.len() != c {
                return Err(mismatch("softmax", xv.shape(), &[m.len()]));
            }
            if !m.iter().any(|&b| b) {
                return Err(Error::EmptyMask(0));
            }
        }
        let allowed = |j: usize| mask.is_none_or(|m| m[j]);
        let mut out = vec![R::zero(); xv.len()];
        for (row, dst) in xv.values().chunks(c).zip(out.chunks_mut(c)) {
            let max = row
                .iter()
                .enumerate()
                .filter(|(j, _)| allowed(*j))
                .map(|(_, &v)| v)
                .fold(R::neg_infinity(), R::max);
            let mut total = R::zero();
            for (j, (&v, d)) in row.iter().zip(dst.iter_mut()).enumerate() {
                if allowed(j) {
                    *d = (v - max).exp();
                    total = total + *d;
                }
            }
            for d in dst.iter_mut() {
                *d = *d / total;
            }
        }
        let out = Tensor::new(xv.shape().to_vec(), out)?;
        Ok(self.push(out, Op::Softmax(x), &[x]))
    }

    /// Per-row `(x - mean) / sqrt(var + eps) * gain + bias` with population variance.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: R) -> Result<Var> {
        let (xv, gv, bv) = (self.value(x), self.value(gain), self.value(bias));
        let d = xv.cols();
        if gv.len() != d || bv.len() != d {
            return Err(mismatch("layer_norm", xv.shape(), gv.shape()));
        }
        let n = R::from_usize(d).unwrap();
        let mut normed = Vec::with_capacity(xv.len());
        let mut inv_std = Vec::with_capacity(xv.rows());
        let mut out = Vec::with_capacity(xv.len());
        for row in xv.values().chunks(d) {
            let mean = row.iter().copied().sum::<R>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<R>() / n;
            let denom = (var + eps).sqrt();
            // a constant row with eps = 0 normalizes to zeros
            let inv = if denom > R::zero() { R::one() / denom } else { R::zero() };
            inv_std.push(inv);
            for (j, &v) in row.iter().enumerate() {
                let z = (v - mean) * inv;
                normed.push(z);
                out.push(z * gv.values()[j] + bv.values()[j]);
            }
        }
        let out = Tensor::new(xv.shape().to_vec(), out)?;
        Ok(self.push(out, Op::LayerNorm { x, gain, bias, normed, inv_std }, &[x, gain, bias]))
    }

    /// Inverted dropout. Returns `x` unchanged in eval mode or when `p == 0`.
    pub fn dropout(&mut self, x: Var, p: f64, training: bool, rng: &mut impl Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::BadProbability(p));
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let scale = R::from_f64_lossy(1.0 / (1.0 - p));
        let keep: Vec<R> = (0..self.value(x).len())
            .map(|_| if rng.gen::<f64>() < p { R::zero() } else { scale })
            .collect();
        let xv = self.value(x);
        let values = xv.values().iter().zip(&keep).map(|(&v, &k)| v * k).collect();
        let out = Tensor::new(xv.shape().to_vec(), values)?;
        Ok(self.push(out, Op::Dropout { x, keep }, &[x]))
    }

    /// Rectangular block of a row stack.
    pub fn slice(&mut self, x: Var, rows: Range<usize>, cols: Range<usize>) -> Result<Var> {
        let xv = self.value(x);
        let c = xv.cols();
        if rows.is_empty() || cols.is_empty() || rows.end > xv.rows() || cols.end > c {
            return Err(mismatch("slice", xv.shape(), &[rows.end, cols.end]));
        }
        let mut values = Vec::with_capacity(rows.len() * cols.len());
        for r in rows.clone() {
            values.extend_from_slice(&xv.values()[r * c + cols.start..r * c + cols.end]);
        }
        let out = Tensor::new(vec![rows.len(), cols.len()], values)?;
        Ok(self.push(out, Op::Slice { x, rows, cols }, &[x]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        let mut width = 0;
        for &p in parts {
            let pv = self.value(p);
            if pv.rows() != rows {
                return Err(mismatch("concat_cols", self.value(parts[0]).shape(), pv.shape()));
            }
            width += pv.cols();
        }
        let mut values = Vec::with_capacity(rows * width);
        for r in 0..rows {
            for &p in parts {
                values.extend_from_slice(self.value(p).row(r));
            }
        }
        let out = Tensor::new(vec![rows, width], values)?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.value(parts[0]).cols();
        let mut values = Vec::new();
        for &p in parts {
            let pv = self.value(p);
            if pv.cols() != cols {
                return Err(mismatch("concat_rows", self.value(parts[0]).shape(), pv.shape()));
            }
            values.extend_from_slice(pv.values());
        }
        let rows = values.len() / cols;
        let out = Tensor::new(vec![rows, cols], values)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), parts))
    }

    /// Output row `g` is the mean of the rows of `x` listed in `groups[g]`.
    pub fn group_mean(&mut self, x: Var, groups: Vec<Vec<usize>>) -> Result<Var> {
        let xv = self.value(x);
        let c = xv.cols();
        let mut values = vec![R::zero(); groups.len() * c];
        for (g, rows) in groups.iter().enumerate() {
            if rows.is_empty() {
                return Err(Error::EmptyMask(g));
            }
            let inv = R::one() / R::from_usize(rows.len()).unwrap();
            let dst = &mut values[g * c..(g + 1) * c];
            for &r in rows {
                if r >= xv.rows() {
                    return Err(mismatch("group_mean", xv.shape(), &[r]));
                }
                for (d, &v) in dst.iter_mut().zip(xv.row(r)) {
                    *d = *d + v * inv;
                }
            }
        }
        let out = Tensor::new(vec![groups.len(), c], values)?;
        Ok(self.push(out, Op::GroupMean { x, groups }, &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).values().iter().copied().sum();
        self.push(Tensor::scalar(total), Op::Sum(x), &[x])
    }

    /// Mean over rows of `-log softmax(logits)[label]`, via log-sum-exp.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        let c = lv.cols();
        if labels.len() != lv.rows() {
            return Err(mismatch("cross_entropy", lv.shape(), &[labels.len()]));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::LabelOutOfRange { label: bad, classes: c });
        }
        let mut probs = Vec::with_capacity(lv.len());
        let mut total = R::zero();
        for (row, &label) in lv.values().chunks(c).zip(labels) {
            let max = row.iter().copied().fold(R::neg_infinity(), R::max);
            let lse = row.iter().map(|&v| (v - max).exp()).sum::<R>().ln() + max;
            total = total + lse - row[label];
            probs.extend(row.iter().map(|&v| (v - lse).exp()));
        }
        let loss = total / R::from_usize(labels.len()).unwrap();
        let op = Op::CrossEntropy { logits, labels: labels.to_vec(), probs };
        Ok(self.push(Tensor::scalar(loss), op, &[logits]))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<R>> {
        let node = self.nodes.get(loss.0).ok_or(Error::DetachedLoss)?;
        if node.value.len() != 1 {
            return Err(Error::NotScalar(node.value.shape().to_vec()));
        }
        if !node.requires_grad {
            return Err(Error::DetachedLoss);
        }
        let mut grads: Vec<Option<Vec<R>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![R::one()]);

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads);
            grads[id] = Some(g);
        }

        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(id, g)| {
                let node = &self.nodes[id];
                match (&node.op, g) {
                    (Op::Leaf, Some(g)) if node.requires_grad => {
                        Some(Tensor::new(node.value.shape().to_vec(), g).expect("grad shape"))
                    }
                    (Op::Leaf, None) if node.requires_grad => Some(Tensor::zeros(node.value.shape())),
                    _ => None,
                }
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node<R>, g: &[R], grads: &mut [Option<Vec<R>>]) {
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [R])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let slot =
                grads[v.0].get_or_insert_with(|| vec![R::zero(); self.nodes[v.0].value.len()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                acc(*a, &mut |da| gemm::nt(g, bv.values(), da, m, n, k));
                acc(*b, &mut |db| gemm::tn(av.values(), g, db, m, k, n));
            }
            Op::MatMulNT(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.rows());
                // C = A·Bᵀ: dA = dC·B, dB = dCᵀ·A
                acc(*a, &mut |da| gemm::nn(g, bv.values(), da, m, n, k));
                acc(*b, &mut |db| gemm::tn(g, av.values(), db, m, n, k));
            }
            Op::Add(a, b) => {
                acc(*a, &mut |d| add_into(d, g));
                acc(*b, &mut |d| add_into(d, g));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                acc(*a, &mut |d| {
                    for ((d, &gi), &y) in d.iter_mut().zip(g).zip(bv.values()) {
                        *d = *d + gi * y;
                    }
                });
                acc(*b, &mut |d| {
                    for ((d, &gi), &x) in d.iter_mut().zip(g).zip(av.values()) {
                        *d = *d + gi * x;
                    }
                });
            }
            Op::Scale(a, c) => acc(*a, &mut |d| {
                for (d, &gi) in d.iter_mut().zip(g) {
                    *d = *d + gi * *c;
                }
            }),
            Op::AddRow(x, v) => {
                acc(*x, &mut |d| add_into(d, g));
                let c = self.value(*v).len();
                acc(*v, &mut |d| {
                    for row in g.chunks(c) {
                        add_into(d, row);
                    }
                });
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                acc(*x, &mut |d| {
                    for ((d, &gi), &v) in d.iter_mut().zip(g).zip(xv.values()) {
                        if v > R::zero() {
                            *d = *d + gi;
                        }
                    }
                });
            }
            Op::Softmax(x) => {
                let y = &node.value;
                let c = y.cols();
                acc(*x, &mut |d| {
                    for ((dr, gr), yr) in d.chunks_mut(c).zip(g.chunks(c)).zip(y.values().chunks(c)) {
                        let dot = gr.iter().zip(yr).fold(R::zero(), |s, (&a, &b)| s + a * b);
                        for ((dd, &gi), &yi) in dr.iter_mut().zip(gr).zip(yr) {
                            *dd = *dd + yi * (gi - dot);
                        }
                    }
                });
            }
            Op::LayerNorm { x, gain, bias, normed, inv_std } => {
                let gv = self.value(*gain).values();
                let d = gv.len();
                let n = R::from_usize(d).unwrap();
                acc(*x, &mut |dx| {
                    for (r, &inv) in inv_std.iter().enumerate() {
                        let gr = &g[r * d..(r + 1) * d];
                        let zr = &normed[r * d..(r + 1) * d];
                        // dz = g * gain; dx = inv/n * (n*dz - sum(dz) - z*sum(dz*z))
                        let mut sum_dz = R::zero();
                        let mut sum_dz_z = R::zero();
                        for j in 0..d {
                            let dz = gr[j] * gv[j];
                            sum_dz = sum_dz + dz;
                            sum_dz_z = sum_dz_z + dz * zr[j];
                        }
                        for j in 0..d {
                            let dz = gr[j] * gv[j];
                            let v = inv / n * (n * dz - sum_dz - zr[j] * sum_dz_z);
                            dx[r * d + j] = dx[r * d + j] + v;
                        }
                    }
                });
                acc(*gain, &mut |dg| {
                    for (gr, zr) in g.chunks(d).zip(normed.chunks(d)) {
                        for j in 0..d {
                            dg[j] = dg[j] + gr[j] * zr[j];
                        }
                    }
                });
                acc(*bias, &mut |db| {
                    for gr in g.chunks(d) {
                        add_into(db, gr);
                    }
                });
            }
            Op::Dropout { x, keep } => acc(*x, &mut |d| {
                for ((d, &gi), &k) in d.iter_mut().zip(g).zip(keep) {
                    *d = *d + gi * k;
                }
            }),
            Op::Slice { x, rows, cols } => {
                let c = self.value(*x).cols();
                let w = cols.len();
                acc(*x, &mut |d| {
                    for (i, r) in rows.clone().enumerate() {
                        let dst = &mut d[r * c + cols.start..r * c + cols.end];
                        add_into(dst, &g[i * w..(i + 1) * w]);
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let width = node.value.cols();
                let mut offset = 0;
                for &p in parts {
                    let pc = self.value(p).cols();
                    acc(p, &mut |d| {
                        for (r, dr) in d.chunks_mut(pc).enumerate() {
                            add_into(dr, &g[r * width + offset..r * width + offset + pc]);
                        }
                    });
                    offset += pc;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    acc(p, &mut |d| add_into(d, &g[offset..offset + len]));
                    offset += len;
                }
            }
            Op::GroupMean { x, groups } => {
                let c = node.value.cols();
                acc(*x, &mut |d| {
                    for (gi, rows) in groups.iter().enumerate() {
                        let inv = R::one() / R::from_usize(rows.len()).unwrap();
                        for &r in rows {
                            for j in 0..c {
                                d[r * c + j] = d[r * c + j] + g[gi * c + j] * inv;
                            }
                        }
                    }
                });
            }
            Op::Sum(x) => acc(*x, &mut |d| {
                for v in d.iter_mut() {
                    *v = *v + g[0];
                }
            }),
            Op::CrossEntropy { logits, labels, probs } => {
                let c = self.value(*logits).cols();
                let scale = g[0] / R::from_usize(labels.len()).unwrap();
                acc(*logits, &mut |d| {
                    for (r, &label) in labels.iter().enumerate() {
                        for j in 0..c {
                            let onehot = if j == label { R::one() } else { R::zero() };
                            d[r * c + j] = d[r * c + j] + (probs[r * c + j] - onehot) * scale;
                        }
                    }
                });
            }
        }
    }
}

fn add_into<R: Real>(dst: &mut [R], src: &[R]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}
