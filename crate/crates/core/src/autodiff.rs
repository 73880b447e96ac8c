//! Define-by-run reverse-mode differentiation over [`DenseMatrix`] values.
//!
//! Every forward pass appends nodes to a fresh [`Tape`]; node ids are the
//! insertion index, so walking ids from high to low is a valid reverse
//! topological order. [`Tape::backward`] pushes adjoints into the gradient
//! slots of trainable parameters and clears the tape.

use crate::error::{Error, Result};
use crate::param::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{gelu, gelu_derivative, DenseMatrix};

/// Default layernorm epsilon.
pub const LAYERNORM_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Input,
    Param(ParamId),
    MatMul(NodeId, NodeId),
    MatMulNt(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Scale(NodeId, T),
    Gelu(NodeId),
    Tanh(NodeId),
    SoftmaxRows(NodeId),
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        normalized: DenseMatrix<T>,
        inv_std: Vec<T>,
    },
    Slice {
        src: NodeId,
        row0: usize,
        col0: usize,
    },
    ConcatCols(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
    GatherRows {
        src: NodeId,
        rows: Vec<usize>,
    },
    Sum(NodeId),
    CrossEntropy {
        logits: NodeId,
        labels: Vec<usize>,
        probs: DenseMatrix<T>,
    },
    Mse {
        pred: NodeId,
        target: DenseMatrix<T>,
    },
}

#[derive(Clone, Debug)]
struct Node<T> {
    value: DenseMatrix<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Append-only operation record for one forward pass.
#[derive(Clone, Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &DenseMatrix<T> {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: DenseMatrix<T>, op: Op<T>, requires_grad: bool) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        id
    }

    fn rg(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// A constant leaf; never receives a gradient.
    pub fn input(&mut self, value: DenseMatrix<T>) -> NodeId {
        self.push(value, Op::Input, false)
    }

    /// Leaf holding a copy of a parameter's current value. Differentiable iff trainable.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> NodeId {
        let p = store.get(id);
        self.push(p.value.clone(), Op::Param(id), p.trainable)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ`, the shape of every `x · Wᵀ` linear layer.
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul_nt(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::MatMulNt(a, b), rg))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).add(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).sub(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).hadamard(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Mul(a, b), rg))
    }

    /// Adds a `1 × cols` row (bias, mask) to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let v = self.value(a).add_row_broadcast(self.value(row))?;
        let rg = self.rg(a) || self.rg(row);
        Ok(self.push(v, Op::AddRow(a, row), rg))
    }

    pub fn scale(&mut self, a: NodeId, c: T) -> NodeId {
        let v = self.value(a).scale(c);
        let rg = self.rg(a);
        self.push(v, Op::Scale(a, c), rg)
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(gelu);
        let rg = self.rg(a);
        self.push(v, Op::Gelu(a), rg)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x.tanh());
        let rg = self.rg(a);
        self.push(v, Op::Tanh(a), rg)
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).softmax_rows();
        let rg = self.rg(a);
        self.push(v, Op::SoftmaxRows(a), rg)
    }

    /// Per-row standardization (biased variance) scaled by `gamma` and shifted by `beta`.
    pub fn layernorm_rows(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: T) -> Result<NodeId> {
        let xv = self.value(x);
        let cols = xv.cols();
        for id in [gamma, beta] {
            let s = self.value(id).shape();
            if s != (1, cols) {
                return Err(Error::shape("layernorm_rows", xv.shape(), s));
            }
        }
        let n = T::from_usize(cols).expect("column count fits scalar");
        let mut normalized = xv.clone();
        let mut inv_std = Vec::with_capacity(xv.rows());
        for r in 0..xv.rows() {
            let row = normalized.row_mut(r);
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let is = T::one() / (var + eps).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * is;
            }
            inv_std.push(is);
        }
        let g = self.value(gamma).row(0);
        let b = self.value(beta).row(0);
        let mut out = normalized.clone();
        for r in 0..out.rows() {
            for ((o, &gv), &bv) in out.row_mut(r).iter_mut().zip(g).zip(b) {
                *o = *o * gv + bv;
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
            },
            rg,
        ))
    }

    pub fn slice(&mut self, src: NodeId, row0: usize, rows: usize, col0: usize, cols: usize) -> Result<NodeId> {
        let v = self.value(src).slice(row0, rows, col0, cols)?;
        let rg = self.rg(src);
        Ok(self.push(v, Op::Slice { src, row0, col0 }, rg))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let rows = parts.first().map_or(0, |&p| self.value(p).rows());
        let mut cols = 0;
        for &p in parts {
            let s = self.value(p).shape();
            if s.0 != rows {
                return Err(Error::shape("concat_cols", (rows, cols), s));
            }
            cols += s.1;
        }
        let mut out = DenseMatrix::zeros(rows, cols);
        let mut c0 = 0;
        for &p in parts {
            let v = self.value(p);
            for r in 0..rows {
                out.row_mut(r)[c0..c0 + v.cols()].copy_from_slice(v.row(r));
            }
            c0 += v.cols();
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let cols = parts.first().map_or(0, |&p| self.value(p).cols());
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            if v.cols() != cols {
                return Err(Error::shape("concat_rows", (rows, cols), v.shape()));
            }
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let out = DenseMatrix::from_vec(rows, cols, data)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Row lookup: output row `i` is `src` row `rows[i]` (embedding lookup, pooling).
    pub fn gather_rows(&mut self, src: NodeId, rows: Vec<usize>) -> Result<NodeId> {
        let sv = self.value(src);
        if let Some(&bad) = rows.iter().find(|&&r| r >= sv.rows()) {
            return Err(Error::Input(format!(
                "row index {bad} out of range for {} rows",
                sv.rows()
            )));
        }
        let cols = sv.cols();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for &r in &rows {
            data.extend_from_slice(sv.row(r));
        }
        let out = DenseMatrix::from_vec(rows.len(), cols, data)?;
        let rg = self.rg(src);
        Ok(self.push(out, Op::GatherRows { src, rows }, rg))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let v = DenseMatrix::filled(1, 1, self.value(a).sum());
        let rg = self.rg(a);
        self.push(v, Op::Sum(a), rg)
    }

    /// Mean softmax cross-entropy of `logits` (n × k) against class labels.
    pub fn cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let lv = self.value(logits);
        if labels.len() != lv.rows() {
            return Err(Error::shape("cross_entropy", lv.shape(), (labels.len(), 1)));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= lv.cols()) {
            return Err(Error::Input(format!("label {bad} out of range for {} classes", lv.cols())));
        }
        let probs = lv.softmax_rows();
        let n = T::from_usize(labels.len()).expect("batch size fits scalar");
        let mut total = T::zero();
        for (r, &y) in labels.iter().enumerate() {
            let row = lv.row(r);
            let max = row.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
            let lse = row.iter().map(|&x| (x - max).exp()).sum::<T>().ln() + max;
            total += lse - row[y];
        }
        let rg = self.rg(logits);
        Ok(self.push(
            DenseMatrix::filled(1, 1, total / n),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Mean squared error of `pred` against a constant target of equal shape.
    pub fn mse(&mut self, pred: NodeId, target: DenseMatrix<T>) -> Result<NodeId> {
        let pv = self.value(pred);
        let diff = pv.sub(&target)?;
        let n = T::from_usize(diff.len().max(1)).expect("size fits scalar");
        let loss = diff.data().iter().map(|&d| d * d).sum::<T>() / n;
        let rg = self.rg(pred);
        Ok(self.push(DenseMatrix::filled(1, 1, loss), Op::Mse { pred, target }, rg))
    }

    /// Propagates d(loss)/d(node) back to every trainable parameter leaf and
    /// clears the tape.
    pub fn backward(&mut self, loss: NodeId, store: &mut ParamStore<T>) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::Usage("backward called on an empty tape".into()));
        }
        if loss.0 >= self.nodes.len() {
            return Err(Error::Usage(format!("loss node {} is not on this tape", loss.0)));
        }
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(Error::Usage(format!("backward needs a 1x1 loss, got {shape:?}")));
        }

        let mut grads: Vec<Option<DenseMatrix<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(DenseMatrix::filled(1, 1, T::one()));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let node = &self.nodes[idx];
            let mut emit = |id: NodeId, d: DenseMatrix<T>| -> Result<()> {
                if !self.nodes[id.0].requires_grad {
                    return Ok(());
                }
                match &mut grads[id.0] {
                    Some(acc) => acc.add_assign(&d),
                    slot @ None => {
                        *slot = Some(d);
                        Ok(())
                    }
                }
            };
            match &node.op {
                Op::Input => {}
                Op::Param(pid) => store.accumulate_grad(*pid, &g)?,
                Op::MatMul(a, b) => {
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    if self.nodes[a.0].requires_grad {
                        emit(*a, g.matmul_nt(bv)?)?;
                    }
                    if self.nodes[b.0].requires_grad {
                        emit(*b, av.matmul_tn(&g)?)?;
                    }
                }
                Op::MatMulNt(a, b) => {
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    if self.nodes[a.0].requires_grad {
                        emit(*a, g.matmul(bv)?)?;
                    }
                    if self.nodes[b.0].requires_grad {
                        emit(*b, g.matmul_tn(av)?)?;
                    }
                }
                Op::Add(a, b) => {
                    emit(*a, g.clone())?;
                    emit(*b, g)?;
                }
                Op::Sub(a, b) => {
                    emit(*b, g.scale(-T::one()))?;
                    emit(*a, g)?;
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    emit(*a, g.hadamard(bv)?)?;
                    emit(*b, g.hadamard(av)?)?;
                }
                Op::AddRow(a, row) => {
                    emit(*row, g.sum_rows())?;
                    emit(*a, g)?;
                }
                Op::Scale(a, c) => emit(*a, g.scale(*c))?,
                Op::Gelu(a) => {
                    let d = self.nodes[a.0].value.map(gelu_derivative).hadamard(&g)?;
                    emit(*a, d)?;
                }
                Op::Tanh(a) => {
                    let d = node.value.map(|y| T::one() - y * y).hadamard(&g)?;
                    emit(*a, d)?;
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut d = g.clone();
                    for r in 0..y.rows() {
                        let dot: T = g.row(r).iter().zip(y.row(r)).map(|(&gi, &yi)| gi * yi).sum();
                        for (dv, &yi) in d.row_mut(r).iter_mut().zip(y.row(r)) {
                            *dv = yi * (*dv - dot);
                        }
                    }
                    emit(*a, d)?;
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    normalized,
                    inv_std,
                } => {
                    let gv = self.nodes[gamma.0].value.row(0).to_vec();
                    if self.nodes[beta.0].requires_grad {
                        emit(*beta, g.sum_rows())?;
                    }
                    if self.nodes[gamma.0].requires_grad {
                        emit(*gamma, g.hadamard(normalized)?.sum_rows())?;
                    }
                    if self.nodes[x.0].requires_grad {
                        let cols = g.cols();
                        let n = T::from_usize(cols).expect("column count fits scalar");
                        let mut dx = DenseMatrix::zeros(g.rows(), cols);
                        for (r, &istd) in inv_std.iter().enumerate() {
                            let xhat = normalized.row(r);
                            let dxhat: Vec<T> = g.row(r).iter().zip(&gv).map(|(&a, &b)| a * b).collect();
                            let mean_d = dxhat.iter().copied().sum::<T>() / n;
                            let mean_dx =
                                dxhat.iter().zip(xhat).map(|(&a, &b)| a * b).sum::<T>() / n;
                            for ((o, &dh), &xh) in dx.row_mut(r).iter_mut().zip(&dxhat).zip(xhat) {
                                *o = istd * (dh - mean_d - xh * mean_dx);
                            }
                        }
                        emit(*x, dx)?;
                    }
                }
                Op::Slice { src, row0, col0 } => {
                    let (sr, sc) = self.nodes[src.0].value.shape();
                    let mut d = DenseMatrix::zeros(sr, sc);
                    for r in 0..g.rows() {
                        d.row_mut(row0 + r)[*col0..col0 + g.cols()].copy_from_slice(g.row(r));
                    }
                    emit(*src, d)?;
                }
                Op::ConcatCols(parts) => {
                    let mut c0 = 0;
                    for &p in parts {
                        let pc = self.nodes[p.0].value.cols();
                        emit(p, g.slice(0, g.rows(), c0, pc)?)?;
                        c0 += pc;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut r0 = 0;
                    for &p in parts {
                        let pr = self.nodes[p.0].value.rows();
                        emit(p, g.slice(r0, pr, 0, g.cols())?)?;
                        r0 += pr;
                    }
                }
                Op::GatherRows { src, rows } => {
                    let (sr, sc) = self.nodes[src.0].value.shape();
                    let mut d = DenseMatrix::zeros(sr, sc);
                    for (i, &r) in rows.iter().enumerate() {
                        for (o, &v) in d.row_mut(r).iter_mut().zip(g.row(i)) {
                            *o += v;
                        }
                    }
                    emit(*src, d)?;
                }
                Op::Sum(a) => {
                    let (r, c) = self.nodes[a.0].value.shape();
                    emit(*a, DenseMatrix::filled(r, c, g.get(0, 0)))?;
                }
                Op::CrossEntropy { logits, labels, probs } => {
                    let n = T::from_usize(labels.len()).expect("batch size fits scalar");
                    let s = g.get(0, 0) / n;
                    let mut d = probs.clone();
                    for (r, &y) in labels.iter().enumerate() {
                        let v = d.get(r, y);
                        d.set(r, y, v - T::one());
                    }
                    emit(*logits, d.scale(s))?;
                }
                Op::Mse { pred, target } => {
                    let pv = &self.nodes[pred.0].value;
                    let n = T::from_usize(pv.len().max(1)).expect("size fits scalar");
                    let s = T::lit(2.0) * g.get(0, 0) / n;
                    emit(*pred, pv.sub(target)?.scale(s))?;
                }
            }
        }
        self.nodes.clear();
        Ok(())
    }
}
