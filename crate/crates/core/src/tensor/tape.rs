//! Reverse-mode autodiff tape.
//!
//! Ops append nodes in execution order; [`Tape::backward`] walks them in
//! exact reverse order and accumulates gradients additively into every input
//! that participates in the loss. Gradients are only computed for nodes that
//! (transitively) depend on a `requires_grad` leaf, so frozen parameter
//! branches cost nothing on the way back.

use super::kernels;
use super::{broadcast_shapes, broadcast_strides, strides, Element, Tensor};
use crate::error::{Error, Result};

pub type ValueId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryKind {
    Gelu,
    Silu,
    Exp,
    Log,
    Sqrt,
    Neg,
}

enum Op<E: Element> {
    Leaf,
    Matmul {
        a: ValueId,
        b: ValueId,
    },
    Binary {
        kind: BinaryKind,
        a: ValueId,
        b: ValueId,
    },
    Unary {
        kind: UnaryKind,
        a: ValueId,
    },
    Scale {
        a: ValueId,
        c: E,
    },
    AddConst {
        a: ValueId,
    },
    Softmax {
        a: ValueId,
        axis: usize,
    },
    RmsNorm {
        a: ValueId,
        gain: ValueId,
        eps: E,
    },
    Embedding {
        table: ValueId,
        ids: Vec<usize>,
    },
    Concat {
        inputs: Vec<ValueId>,
        axis: usize,
    },
    Narrow {
        a: ValueId,
        axis: usize,
        start: usize,
    },
    Reshape {
        a: ValueId,
    },
    Transpose {
        a: ValueId,
        perm: Vec<usize>,
    },
    MseLoss {
        pred: ValueId,
        target: ValueId,
    },
    SumAll {
        a: ValueId,
    },
    MeanAll {
        a: ValueId,
    },
}

struct Node<E: Element> {
    value: Tensor<E>,
    grad: Option<Vec<E>>,
    needs: bool,
    op: Op<E>,
}

pub struct Tape<E: Element = f32> {
    nodes: Vec<Node<E>>,
}

impl<E: Element> Default for Tape<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Element> Tape<E> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Insert a leaf value. Gradients accumulate into it only when
    /// `requires_grad` is set.
    pub fn leaf(&mut self, value: Tensor<E>, requires_grad: bool) -> ValueId {
        self.push(value, requires_grad, Op::Leaf)
    }

    pub fn value(&self, id: ValueId) -> &Tensor<E> {
        &self.nodes[id].value
    }

    pub fn shape(&self, id: ValueId) -> &[usize] {
        self.nodes[id].value.shape()
    }

    /// Gradient of the last `backward` with respect to node `id`. A
    /// participating leaf that never received flow reports zeros.
    pub fn grad(&self, id: ValueId) -> Option<Tensor<E>> {
        let node = &self.nodes[id];
        if !node.needs {
            return None;
        }
        let data = match &node.grad {
            Some(g) => g.clone(),
            None => vec![E::ZERO; node.value.numel()],
        };
        Some(Tensor::new(node.value.shape().to_vec(), data).expect("grad shape"))
    }

    fn push(&mut self, value: Tensor<E>, needs: bool, op: Op<E>) -> ValueId {
        let id = self.nodes.len();
        self.nodes.push(Node {
            value,
            grad: None,
            needs,
            op,
        });
        id
    }

    fn needs(&self, id: ValueId) -> bool {
        self.nodes[id].needs
    }

    fn accumulate(&mut self, id: ValueId, contrib: Vec<E>) {
        let node = &mut self.nodes[id];
        debug_assert_eq!(node.value.numel(), contrib.len());
        match &mut node.grad {
            Some(g) => {
                for (a, b) in g.iter_mut().zip(contrib) {
                    *a = a.add(b);
                }
            }
            None => node.grad = Some(contrib),
        }
    }

    // ── shape plumbing ──────────────────────────────────────────────────

    pub fn reshape(&mut self, a: ValueId, new_shape: &[usize]) -> Result<ValueId> {
        let v = &self.nodes[a].value;
        let numel: usize = new_shape.iter().product();
        if numel != v.numel() {
            return Err(Error::Dimension(format!(
                "reshape: {:?} ({} elements) cannot become {:?} ({} elements)",
                v.shape(),
                v.numel(),
                new_shape,
                numel
            )));
        }
        let out = Tensor::new(new_shape.to_vec(), v.data().to_vec())?;
        let needs = self.needs(a);
        Ok(self.push(out, needs, Op::Reshape { a }))
    }

    pub fn transpose(&mut self, a: ValueId, perm: &[usize]) -> Result<ValueId> {
        let v = &self.nodes[a].value;
        let shape = v.shape();
        if perm.len() != shape.len() {
            return Err(Error::Dimension(format!(
                "transpose: permutation {:?} does not match shape {:?}",
                perm, shape
            )));
        }
        let mut seen = vec![false; perm.len()];
        for &p in perm {
            if p >= perm.len() || seen[p] {
                return Err(Error::Dimension(format!(
                    "transpose: invalid permutation {perm:?}"
                )));
            }
            seen[p] = true;
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
        let data = permute_data(v.data(), shape, perm);
        let out = Tensor::new(out_shape, data)?;
        let needs = self.needs(a);
        Ok(self.push(
            out,
            needs,
            Op::Transpose {
                a,
                perm: perm.to_vec(),
            },
        ))
    }

    pub fn narrow(&mut self, a: ValueId, axis: usize, start: usize, len: usize) -> Result<ValueId> {
        let v = &self.nodes[a].value;
        let shape = v.shape();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::Dimension(format!(
                "narrow: range {}..{} on axis {} of shape {:?}",
                start,
                start + len,
                axis,
                shape
            )));
        }
        let mut out_shape = shape.to_vec();
        out_shape[axis] = len;
        let data = copy_axis_range(v.data(), shape, axis, start, len);
        let out = Tensor::new(out_shape, data)?;
        let needs = self.needs(a);
        Ok(self.push(out, needs, Op::Narrow { a, axis, start }))
    }

    pub fn concat(&mut self, inputs: &[ValueId], axis: usize) -> Result<ValueId> {
        if inputs.is_empty() {
            return Err(Error::Contract("concat: no inputs".into()));
        }
        let first = self.nodes[inputs[0]].value.shape().to_vec();
        if axis >= first.len() {
            return Err(Error::Dimension(format!(
                "concat: axis {} out of range for shape {:?}",
                axis, first
            )));
        }
        let mut axis_total = 0usize;
        for &id in inputs {
            let s = self.nodes[id].value.shape();
            if s.len() != first.len()
                || s.iter()
                    .zip(first.iter())
                    .enumerate()
                    .any(|(d, (x, y))| d != axis && x != y)
            {
                return Err(Error::Dimension(format!(
                    "concat: shape {:?} incompatible with {:?} along axis {}",
                    s, first, axis
                )));
            }
            axis_total += s[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = axis_total;
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut data = vec![E::ZERO; out_shape.iter().product()];
        let row_out = axis_total * inner;
        let mut col_off = 0usize;
        for &id in inputs {
            let v = &self.nodes[id].value;
            let rows = v.shape()[axis];
            let src = v.data();
            for o in 0..outer {
                let dst = &mut data[o * row_out + col_off..o * row_out + col_off + rows * inner];
                dst.copy_from_slice(&src[o * rows * inner..(o + 1) * rows * inner]);
            }
            col_off += rows * inner;
        }
        let out = Tensor::new(out_shape, data)?;
        let needs = inputs.iter().any(|&id| self.needs(id));
        Ok(self.push(
            out,
            needs,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
        ))
    }

    // ── arithmetic ──────────────────────────────────────────────────────

    pub fn binary(&mut self, kind: BinaryKind, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (sa, sb) = (
            self.nodes[a].value.shape().to_vec(),
            self.nodes[b].value.shape().to_vec(),
        );
        let out_shape = broadcast_shapes(&sa, &sb)?;
        let numel: usize = out_shape.iter().product();
        let da = self.nodes[a].value.data();
        let db = self.nodes[b].value.data();
        let mut data = vec![E::ZERO; numel];
        let apply = |x: E, y: E| match kind {
            BinaryKind::Add => x.add(y),
            BinaryKind::Sub => x.sub(y),
            BinaryKind::Mul => x.mul(y),
        };
        if sa == sb {
            for i in 0..numel {
                data[i] = apply(da[i], db[i]);
            }
        } else if suffix_len(&sb, &out_shape).is_some() && sa.len() == out_shape.len() && sa == out_shape
        {
            // b tiles over leading dims of a.
            let tile = db.len().max(1);
            for (chunk, slot) in da.chunks(tile).zip(data.chunks_mut(tile)) {
                for j in 0..chunk.len() {
                    slot[j] = apply(chunk[j], db[j]);
                }
            }
        } else if suffix_len(&sa, &out_shape).is_some() && sb.len() == out_shape.len() && sb == out_shape
        {
            // a tiles over leading dims of b.
            let tile = da.len().max(1);
            for (chunk, slot) in db.chunks(tile).zip(data.chunks_mut(tile)) {
                for j in 0..chunk.len() {
                    slot[j] = apply(da[j], chunk[j]);
                }
            }
        } else {
            let st = strides(&out_shape);
            let ba = broadcast_strides(&sa, &out_shape);
            let bb = broadcast_strides(&sb, &out_shape);
            for (i, slot) in data.iter_mut().enumerate() {
                let (mut ia, mut ib, mut rem) = (0usize, 0usize, i);
                for d in 0..out_shape.len() {
                    let c = rem / st[d];
                    rem %= st[d];
                    ia += c * ba[d];
                    ib += c * bb[d];
                }
                *slot = apply(da[ia], db[ib]);
            }
        }
        let out = Tensor::new(out_shape, data)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, needs, Op::Binary { kind, a, b }))
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.binary(BinaryKind::Mul, a, b)
    }

    pub fn unary(&mut self, kind: UnaryKind, a: ValueId) -> Result<ValueId> {
        let v = &self.nodes[a].value;
        match kind {
            UnaryKind::Log => {
                if v.data().iter().any(|x| *x <= E::ZERO) {
                    return Err(Error::Domain("log of non-positive input".into()));
                }
            }
            UnaryKind::Sqrt => {
                if v.data().iter().any(|x| *x < E::ZERO) {
                    return Err(Error::Domain("sqrt of negative input".into()));
                }
            }
            _ => {}
        }
        let data: Vec<E> = v
            .data()
            .iter()
            .map(|&x| match kind {
                UnaryKind::Gelu => kernels::gelu(x),
                UnaryKind::Silu => kernels::silu(x),
                UnaryKind::Exp => x.exp(),
                UnaryKind::Log => x.ln(),
                UnaryKind::Sqrt => x.sqrt(),
                UnaryKind::Neg => x.neg(),
            })
            .collect();
        let out = Tensor::new(v.shape().to_vec(), data)?;
        let needs = self.needs(a);
        Ok(self.push(out, needs, Op::Unary { kind, a }))
    }

    pub fn gelu(&mut self, a: ValueId) -> Result<ValueId> {
        self.unary(UnaryKind::Gelu, a)
    }

    pub fn silu(&mut self, a: ValueId) -> Result<ValueId> {
        self.unary(UnaryKind::Silu, a)
    }

    pub fn neg(&mut self, a: ValueId) -> Result<ValueId> {
        self.unary(UnaryKind::Neg, a)
    }

    /// Multiply by a compile-time constant (not differentiated through `c`).
    pub fn scale(&mut self, a: ValueId, c: E) -> Result<ValueId> {
        let v = &self.nodes[a].value;
        let data: Vec<E> = v.data().iter().map(|&x| x.mul(c)).collect();
        let out = Tensor::new(v.shape().to_vec(), data)?;
        let needs = self.needs(a);
        Ok(self.push(out, needs, Op::Scale { a, c }))
    }

    /// Add a constant to every element.
    pub fn add_const(&mut self, a: ValueId, c: E) -> Result<ValueId> {
        let v = &self.nodes[a].value;
        let data: Vec<E> = v.data().iter().map(|&x| x.add(c)).collect();
        let out = Tensor::new(v.shape().to_vec(), data)?;
        let needs = self.needs(a);
        let _ = c;
        Ok(self.push(out, needs, Op::AddConst { a }))
    }

    /// Batched matrix product. `a`: [.., m, k], `b`: [.., k, n]; leading batch
    /// dims broadcast.
    pub fn matmul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let sa = self.nodes[a].value.shape().to_vec();
        let sb = self.nodes[b].value.shape().to_vec();
        if sa.len() < 2 || sb.len() < 2 {
            return Err(Error::Dimension(format!(
                "matmul: operands must be at least rank 2, got {sa:?} and {sb:?}"
            )));
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != k2 {
            return Err(Error::Dimension(format!(
                "matmul: inner dimensions differ between {sa:?} and {sb:?}"
            )));
        }
        let batch_a = &sa[..sa.len() - 2];
        let batch_b = &sb[..sb.len() - 2];
        let batch = broadcast_shapes(batch_a, batch_b).map_err(|_| {
            Error::Dimension(format!(
                "matmul: batch dims of {sa:?} and {sb:?} do not broadcast"
            ))
        })?;
        let n_batch: usize = batch.iter().product();
        let stride_a = batch_offsets(batch_a, &batch, m * k);
        let stride_b = batch_offsets(batch_b, &batch, k * n);

        let mut out_shape = batch.clone();
        out_shape.push(m);
        out_shape.push(n);
        let mut data = vec![E::ZERO; n_batch * m * n];
        {
            let da = self.nodes[a].value.data();
            let db = self.nodes[b].value.data();
            for bi in 0..n_batch {
                let oa = stride_a(bi);
                let ob = stride_b(bi);
                kernels::matmul_acc(
                    &da[oa..oa + m * k],
                    &db[ob..ob + k * n],
                    &mut data[bi * m * n..(bi + 1) * m * n],
                    m,
                    k,
                    n,
                );
            }
        }
        let out = Tensor::new(out_shape, data)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, needs, Op::Matmul { a, b }))
    }

    pub fn softmax(&mut self, a: ValueId, axis: usize) -> Result<ValueId> {
        let v = &self.nodes[a].value;
        let shape = v.shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::Dimension(format!(
                "softmax: axis {} out of range for shape {:?}",
                axis, shape
            )));
        }
        let data = if axis == shape.len() - 1 {
            let cols = shape[axis];
            let mut out = vec![E::ZERO; v.numel()];
            kernels::softmax_rows(v.data(), &mut out, cols);
            out
        } else {
            softmax_general(v.data(), &shape, axis)
        };
        let out = Tensor::new(shape, data)?;
        let needs = self.needs(a);
        Ok(self.push(out, needs, Op::Softmax { a, axis }))
    }

    /// RMS normalization over the last axis with a learned gain vector.
    pub fn rms_norm(&mut self, a: ValueId, gain: ValueId, eps: E) -> Result<ValueId> {
        let v = &self.nodes[a].value;
        let shape = v.shape().to_vec();
        let d = *shape.last().ok_or_else(|| {
            Error::Dimension("rms_norm: input must have at least one axis".into())
        })?;
        let gv = &self.nodes[gain].value;
        if gv.shape() != [d] {
            return Err(Error::Dimension(format!(
                "rms_norm: gain shape {:?} does not match last axis of {:?}",
                gv.shape(),
                shape
            )));
        }
        let mut data = vec![E::ZERO; v.numel()];
        let inv_d = E::from_f64(1.0 / d as f64);
        for (row, out_row) in v.data().chunks_exact(d).zip(data.chunks_exact_mut(d)) {
            let mut ss = E::ZERO;
            for &x in row {
                ss = ss.add(x.mul(x));
            }
            let r_inv = E::ONE.div(ss.mul(inv_d).add(eps).sqrt());
            for i in 0..d {
                out_row[i] = row[i].mul(r_inv).mul(gv.data()[i]);
            }
        }
        let out = Tensor::new(shape, data)?;
        let needs = self.needs(a) || self.needs(gain);
        Ok(self.push(out, needs, Op::RmsNorm { a, gain, eps }))
    }

    /// Gather rows of `table` ([vocab, d]) by index.
    pub fn embedding(&mut self, table: ValueId, ids: &[usize]) -> Result<ValueId> {
        let t = &self.nodes[table].value;
        let shape = t.shape();
        if shape.len() != 2 {
            return Err(Error::Dimension(format!(
                "embedding: table must be rank 2, got {shape:?}"
            )));
        }
        let (vocab, d) = (shape[0], shape[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= vocab) {
            return Err(Error::Dimension(format!(
                "embedding: id {bad} out of range for table {shape:?}"
            )));
        }
        let mut data = vec![E::ZERO; ids.len() * d];
        for (row, &id) in ids.iter().enumerate() {
            data[row * d..(row + 1) * d].copy_from_slice(&t.data()[id * d..(id + 1) * d]);
        }
        let out = Tensor::new(vec![ids.len(), d], data)?;
        let needs = self.needs(table);
        Ok(self.push(
            out,
            needs,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    pub fn mse_loss(&mut self, pred: ValueId, target: ValueId) -> Result<ValueId> {
        let p = &self.nodes[pred].value;
        let t = &self.nodes[target].value;
        if p.shape() != t.shape() {
            return Err(Error::Dimension(format!(
                "mse_loss: prediction {:?} vs target {:?}",
                p.shape(),
                t.shape()
            )));
        }
        let n = E::from_f64(p.numel() as f64);
        let mut acc = E::ZERO;
        for (&a, &b) in p.data().iter().zip(t.data().iter()) {
            let d = a.sub(b);
            acc = acc.add(d.mul(d));
        }
        let out = Tensor::scalar(acc.div(n));
        let needs = self.needs(pred) || self.needs(target);
        Ok(self.push(out, needs, Op::MseLoss { pred, target }))
    }

    pub fn sum_all(&mut self, a: ValueId) -> Result<ValueId> {
        let v = &self.nodes[a].value;
        let mut acc = E::ZERO;
        for &x in v.data() {
            acc = acc.add(x);
        }
        let needs = self.needs(a);
        Ok(self.push(Tensor::scalar(acc), needs, Op::SumAll { a }))
    }

    pub fn mean_all(&mut self, a: ValueId) -> Result<ValueId> {
        let v = &self.nodes[a].value;
        let n = E::from_f64(v.numel() as f64);
        let mut acc = E::ZERO;
        for &x in v.data() {
            acc = acc.add(x);
        }
        let needs = self.needs(a);
        Ok(self.push(Tensor::scalar(acc.div(n)), needs, Op::MeanAll { a }))
    }

    // ── backward ────────────────────────────────────────────────────────

    /// Propagate d(loss)/d(node) for every participating node. `loss` must be
    /// scalar (one element).
    pub fn backward(&mut self, loss: ValueId) -> Result<()> {
        if self.nodes[loss].value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward: loss must be scalar, got shape {:?}",
                self.nodes[loss].value.shape()
            )));
        }
        self.nodes[loss].grad = Some(vec![E::ONE]);
        for i in (0..=loss).rev() {
            if !self.nodes[i].needs || self.nodes[i].grad.is_none() {
                continue;
            }
            self.step_backward(i);
        }
        Ok(())
    }

    fn step_backward(&mut self, i: ValueId) {
        let grad = self.nodes[i].grad.clone().expect("grad present");
        // Op is moved out temporarily to appease the borrow checker; every op
        // stores only ids and constants, so cloning the relevant parts here
        // is cheap relative to the math below.
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Reshape { a } => {
                let a = *a;
                if self.needs(a) {
                    self.accumulate(a, grad.clone());
                }
            }
            Op::Transpose { a, perm } => {
                let a = *a;
                let perm = perm.clone();
                if self.needs(a) {
                    let out_shape = self.nodes[i].value.shape().to_vec();
                    let mut inv = vec![0usize; perm.len()];
                    for (d, &p) in perm.iter().enumerate() {
                        inv[p] = d;
                    }
                    let back = permute_data(&grad, &out_shape, &inv);
                    self.accumulate(a, back);
                }
            }
            Op::Narrow { a, axis, start } => {
                let (a, axis, start) = (*a, *axis, *start);
                if self.needs(a) {
                    let in_shape = self.nodes[a].value.shape().to_vec();
                    let out_shape = self.nodes[i].value.shape().to_vec();
                    let mut full = vec![E::ZERO; self.nodes[a].value.numel()];
                    scatter_axis_range(&mut full, &in_shape, axis, start, &grad, &out_shape);
                    self.accumulate(a, full);
                }
            }
            Op::Concat { inputs, axis } => {
                let inputs = inputs.clone();
                let axis = *axis;
                let out_shape = self.nodes[i].value.shape().to_vec();
                let mut off = 0usize;
                for &id in &inputs {
                    let span = self.nodes[id].value.shape()[axis];
                    if self.needs(id) {
                        let in_shape = self.nodes[id].value.shape().to_vec();
                        let piece = copy_axis_range(&grad, &out_shape, axis, off, span);
                        debug_assert_eq!(piece.len(), in_shape.iter().product::<usize>());
                        self.accumulate(id, piece);
                    }
                    off += span;
                }
            }
            Op::Binary { kind, a, b } => {
                let (kind, a, b) = (*kind, *a, *b);
                let out_shape = self.nodes[i].value.shape().to_vec();
                let sa = self.nodes[a].value.shape().to_vec();
                let sb = self.nodes[b].value.shape().to_vec();
                if self.needs(a) {
                    let contrib = match kind {
                        BinaryKind::Add | BinaryKind::Sub => {
                            reduce_to_shape(&grad, &out_shape, &sa)
                        }
                        BinaryKind::Mul => {
                            let other =
                                broadcast_gather(self.nodes[b].value.data(), &sb, &out_shape);
                            let prod: Vec<E> = grad
                                .iter()
                                .zip(other.iter())
                                .map(|(&g, &o)| g.mul(o))
                                .collect();
                            reduce_to_shape(&prod, &out_shape, &sa)
                        }
                    };
                    self.accumulate(a, contrib);
                }
                if self.needs(b) {
                    let contrib = match kind {
                        BinaryKind::Add => reduce_to_shape(&grad, &out_shape, &sb),
                        BinaryKind::Sub => {
                            let negg: Vec<E> = grad.iter().map(|&g| g.neg()).collect();
                            reduce_to_shape(&negg, &out_shape, &sb)
                        }
                        BinaryKind::Mul => {
                            let other =
                                broadcast_gather(self.nodes[a].value.data(), &sa, &out_shape);
                            let prod: Vec<E> = grad
                                .iter()
                                .zip(other.iter())
                                .map(|(&g, &o)| g.mul(o))
                                .collect();
                            reduce_to_shape(&prod, &out_shape, &sb)
                        }
                    };
                    self.accumulate(b, contrib);
                }
            }
            Op::Unary { kind, a } => {
                let (kind, a) = (*kind, *a);
                if self.needs(a) {
                    let x = self.nodes[a].value.data();
                    let y = self.nodes[i].value.data();
                    let contrib: Vec<E> = grad
                        .iter()
                        .enumerate()
                        .map(|(j, &g)| match kind {
                            UnaryKind::Gelu => g.mul(kernels::gelu_grad(x[j])),
                            UnaryKind::Silu => g.mul(kernels::silu_grad(x[j])),
                            UnaryKind::Exp => g.mul(y[j]),
                            UnaryKind::Log => g.div(x[j]),
                            UnaryKind::Sqrt => g.div(y[j].add(y[j])),
                            UnaryKind::Neg => g.neg(),
                        })
                        .collect();
                    self.accumulate(a, contrib);
                }
            }
            Op::Scale { a, c } => {
                let (a, c) = (*a, *c);
                if self.needs(a) {
                    let contrib: Vec<E> = grad.iter().map(|&g| g.mul(c)).collect();
                    self.accumulate(a, contrib);
                }
            }
            Op::AddConst { a } => {
                let a = *a;
                if self.needs(a) {
                    self.accumulate(a, grad.clone());
                }
            }
            Op::Matmul { a, b } => {
                let (a, b) = (*a, *b);
                let sa = self.nodes[a].value.shape().to_vec();
                let sb = self.nodes[b].value.shape().to_vec();
                let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
                let n = sb[sb.len() - 1];
                let batch_a = sa[..sa.len() - 2].to_vec();
                let batch_b = sb[..sb.len() - 2].to_vec();
                let batch = broadcast_shapes(&batch_a, &batch_b).expect("checked in forward");
                let n_batch: usize = batch.iter().product();
                let off_a = batch_offsets(&batch_a, &batch, m * k);
                let off_b = batch_offsets(&batch_b, &batch, k * n);

                if self.needs(a) {
                    // dA = dC . B^T, accumulated per broadcast batch index.
                    let mut da = vec![E::ZERO; self.nodes[a].value.numel()];
                    {
                        let db_ = self.nodes[b].value.data();
                        for bi in 0..n_batch {
                            let ob = off_b(bi);
                            let bt = kernels::transpose_2d(&db_[ob..ob + k * n], k, n);
                            let oa = off_a(bi);
                            kernels::matmul_acc(
                                &grad[bi * m * n..(bi + 1) * m * n],
                                &bt,
                                &mut da[oa..oa + m * k],
                                m,
                                n,
                                k,
                            );
                        }
                    }
                    self.accumulate(a, da);
                }
                if self.needs(b) {
                    // dB = A^T . dC
                    let mut db = vec![E::ZERO; self.nodes[b].value.numel()];
                    {
                        let da_ = self.nodes[a].value.data();
                        for bi in 0..n_batch {
                            let oa = off_a(bi);
                            let at = kernels::transpose_2d(&da_[oa..oa + m * k], m, k);
                            let ob = off_b(bi);
                            kernels::matmul_acc(
                                &at,
                                &grad[bi * m * n..(bi + 1) * m * n],
                                &mut db[ob..ob + k * n],
                                k,
                                m,
                                n,
                            );
                        }
                    }
                    self.accumulate(b, db);
                }
            }
            Op::Softmax { a, axis } => {
                let (a, axis) = (*a, *axis);
                if self.needs(a) {
                    let shape = self.nodes[i].value.shape().to_vec();
                    let s = self.nodes[i].value.data();
                    let axis_len = shape[axis];
                    let outer: usize = shape[..axis].iter().product();
                    let inner: usize = shape[axis + 1..].iter().product();
                    let mut contrib = vec![E::ZERO; s.len()];
                    for o in 0..outer {
                        for r in 0..inner {
                            let mut dot = E::ZERO;
                            for j in 0..axis_len {
                                let f = o * axis_len * inner + j * inner + r;
                                dot = dot.add(grad[f].mul(s[f]));
                            }
                            for j in 0..axis_len {
                                let f = o * axis_len * inner + j * inner + r;
                                contrib[f] = s[f].mul(grad[f].sub(dot));
                            }
                        }
                    }
                    self.accumulate(a, contrib);
                }
            }
            Op::RmsNorm { a, gain, eps } => {
                let (a, gain, eps) = (*a, *gain, *eps);
                let shape = self.nodes[a].value.shape().to_vec();
                let d = *shape.last().unwrap();
                let inv_d = E::from_f64(1.0 / d as f64);
                let x = self.nodes[a].value.data().to_vec();
                let g = self.nodes[gain].value.data().to_vec();
                let needs_a = self.needs(a);
                let needs_gain = self.needs(gain);
                let mut dx = vec![E::ZERO; x.len()];
                let mut dgain = vec![E::ZERO; d];
                for (row_idx, row) in x.chunks_exact(d).enumerate() {
                    let gr = &grad[row_idx * d..(row_idx + 1) * d];
                    let mut ss = E::ZERO;
                    for &v in row {
                        ss = ss.add(v.mul(v));
                    }
                    let r_inv = E::ONE.div(ss.mul(inv_d).add(eps).sqrt());
                    // u = x / r ; dot = sum_j dy_j g_j u_j / d
                    let mut dot = E::ZERO;
                    for j in 0..d {
                        dot = dot.add(gr[j].mul(g[j]).mul(row[j].mul(r_inv)));
                    }
                    dot = dot.mul(inv_d);
                    for j in 0..d {
                        let u = row[j].mul(r_inv);
                        if needs_a {
                            dx[row_idx * d + j] = r_inv.mul(gr[j].mul(g[j]).sub(u.mul(dot)));
                        }
                        if needs_gain {
                            dgain[j] = dgain[j].add(gr[j].mul(u));
                        }
                    }
                }
                if needs_a {
                    self.accumulate(a, dx);
                }
                if needs_gain {
                    self.accumulate(gain, dgain);
                }
            }
            Op::Embedding { table, ids } => {
                let table = *table;
                let ids = ids.clone();
                if self.needs(table) {
                    let d = self.nodes[table].value.shape()[1];
                    let mut dt = vec![E::ZERO; self.nodes[table].value.numel()];
                    for (row, &id) in ids.iter().enumerate() {
                        for j in 0..d {
                            dt[id * d + j] = dt[id * d + j].add(grad[row * d + j]);
                        }
                    }
                    self.accumulate(table, dt);
                }
            }
            Op::MseLoss { pred, target } => {
                let (pred, target) = (*pred, *target);
                let n = self.nodes[pred].value.numel();
                let scale = E::from_f64(2.0 / n as f64).mul(grad[0]);
                let diff: Vec<E> = self.nodes[pred]
                    .value
                    .data()
                    .iter()
                    .zip(self.nodes[target].value.data().iter())
                    .map(|(&p, &t)| p.sub(t).mul(scale))
                    .collect();
                if self.needs(pred) {
                    self.accumulate(pred, diff.clone());
                }
                if self.needs(target) {
                    let negd: Vec<E> = diff.iter().map(|&x| x.neg()).collect();
                    self.accumulate(target, negd);
                }
            }
            Op::SumAll { a } => {
                let a = *a;
                if self.needs(a) {
                    let contrib = vec![grad[0]; self.nodes[a].value.numel()];
                    self.accumulate(a, contrib);
                }
            }
            Op::MeanAll { a } => {
                let a = *a;
                if self.needs(a) {
                    let n = self.nodes[a].value.numel();
                    let g = grad[0].mul(E::from_f64(1.0 / n as f64));
                    let contrib = vec![g; n];
                    self.accumulate(a, contrib);
                }
            }
        }
    }
}

// ── helpers ─────────────────────────────────────────────────────────────

/// Maps a linear broadcast-batch index to the element offset inside an
/// operand whose batch dims may be shorter or 1. `mat` is the element count
/// of one matrix (m*k or k*n); the returned offset is in elements.
fn batch_offsets(op_batch: &[usize], out_batch: &[usize], mat: usize) -> impl Fn(usize) -> usize {
    let st_out = strides(out_batch);
    let bs = broadcast_strides(op_batch, out_batch);
    let ndim = out_batch.len();
    move |bi: usize| {
        let mut rem = bi;
        let mut off = 0usize;
        for d in 0..ndim {
            let c = rem / st_out[d];
            rem %= st_out[d];
            off += c * bs[d];
        }
        off * mat
    }
}

fn permute_data<E: Element>(data: &[E], shape: &[usize], perm: &[usize]) -> Vec<E> {
    let mut out = vec![E::ZERO; data.len()];
    // The two permutations attention uses constantly get direct loops.
    if perm == [1, 0, 2] {
        let (a, b, c) = (shape[0], shape[1], shape[2]);
        for i in 0..a {
            for j in 0..b {
                out[(j * a + i) * c..(j * a + i + 1) * c]
                    .copy_from_slice(&data[(i * b + j) * c..(i * b + j + 1) * c]);
            }
        }
        return out;
    }
    if perm == [0, 2, 1] {
        let (a, b, c) = (shape[0], shape[1], shape[2]);
        for i in 0..a {
            let src = &data[i * b * c..(i + 1) * b * c];
            let dst = &mut out[i * b * c..(i + 1) * b * c];
            for j in 0..b {
                for k in 0..c {
                    dst[k * b + j] = src[j * c + k];
                }
            }
        }
        return out;
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let in_strides = strides(shape);
    let out_strides = strides(&out_shape);
    let ndim = shape.len();
    for (i, slot) in out.iter_mut().enumerate() {
        let mut rem = i;
        let mut src = 0usize;
        for d in 0..ndim {
            let c = rem / out_strides[d];
            rem %= out_strides[d];
            src += c * in_strides[perm[d]];
        }
        *slot = data[src];
    }
    out
}

fn copy_axis_range<E: Element>(
    data: &[E],
    shape: &[usize],
    axis: usize,
    start: usize,
    len: usize,
) -> Vec<E> {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let span = shape[axis];
    let mut out = vec![E::ZERO; outer * len * inner];
    for o in 0..outer {
        let src = &data[(o * span + start) * inner..(o * span + start + len) * inner];
        out[o * len * inner..(o + 1) * len * inner].copy_from_slice(src);
    }
    out
}

fn scatter_axis_range<E: Element>(
    full: &mut [E],
    full_shape: &[usize],
    axis: usize,
    start: usize,
    piece: &[E],
    piece_shape: &[usize],
) {
    let outer: usize = full_shape[..axis].iter().product();
    let inner: usize = full_shape[axis + 1..].iter().product();
    let span = full_shape[axis];
    let len = piece_shape[axis];
    for o in 0..outer {
        let dst = &mut full[(o * span + start) * inner..(o * span + start + len) * inner];
        let src = &piece[o * len * inner..(o + 1) * len * inner];
        for (d, s) in dst.iter_mut().zip(src.iter()) {
            *d = d.add(*s);
        }
    }
}

/// If `shape` (ignoring leading size-1 dims) is a trailing suffix of
/// `full`, returns the suffix element count.
fn suffix_len(shape: &[usize], full: &[usize]) -> Option<usize> {
    let trimmed: &[usize] = {
        let mut s = shape;
        while !s.is_empty() && s[0] == 1 {
            s = &s[1..];
        }
        s
    };
    if trimmed.len() > full.len() {
        return None;
    }
    if full[full.len() - trimmed.len()..] == *trimmed {
        Some(trimmed.iter().product())
    } else {
        None
    }
}

/// Expand `data` of `shape` to the broadcast `target` shape.
fn broadcast_gather<E: Element>(data: &[E], shape: &[usize], target: &[usize]) -> Vec<E> {
    if shape == target {
        return data.to_vec();
    }
    let numel: usize = target.iter().product();
    let mut out = vec![E::ZERO; numel];
    if let Some(tile) = suffix_len(shape, target) {
        if tile == data.len() {
            for slot in out.chunks_mut(tile.max(1)) {
                slot.copy_from_slice(&data[..slot.len()]);
            }
            return out;
        }
    }
    let st = strides(target);
    let bs = broadcast_strides(shape, target);
    for (i, slot) in out.iter_mut().enumerate() {
        let mut rem = i;
        let mut src = 0usize;
        for d in 0..target.len() {
            let c = rem / st[d];
            rem %= st[d];
            src += c * bs[d];
        }
        *slot = data[src];
    }
    out
}

/// Sum a gradient of `from` shape down to the (broadcast-source) `to` shape.
fn reduce_to_shape<E: Element>(grad: &[E], from: &[usize], to: &[usize]) -> Vec<E> {
    if from == to {
        return grad.to_vec();
    }
    let to_numel: usize = to.iter().product();
    let mut out = vec![E::ZERO; to_numel];
    if let Some(tile) = suffix_len(to, from) {
        if tile == to_numel {
            for chunk in grad.chunks(tile.max(1)) {
                for (o, &g) in out.iter_mut().zip(chunk.iter()) {
                    *o = o.add(g);
                }
            }
            return out;
        }
    }
    let st = strides(from);
    let bs = broadcast_strides(to, from);
    for (i, &g) in grad.iter().enumerate() {
        let mut rem = i;
        let mut dst = 0usize;
        for d in 0..from.len() {
            let c = rem / st[d];
            rem %= st[d];
            dst += c * bs[d];
        }
        out[dst] = out[dst].add(g);
    }
    out
}

fn softmax_general<E: Element>(data: &[E], shape: &[usize], axis: usize) -> Vec<E> {
    let axis_len = shape[axis];
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let mut out = vec![E::ZERO; data.len()];
    for o in 0..outer {
        for r in 0..inner {
            let idx = |j: usize| o * axis_len * inner + j * inner + r;
            let mut mx = data[idx(0)];
            for j in 1..axis_len {
                mx = mx.max(data[idx(j)]);
            }
            let mut sum = E::ZERO;
            for j in 0..axis_len {
                let e = data[idx(j)].sub(mx).exp();
                out[idx(j)] = e;
                sum = sum.add(e);
            }
            for j in 0..axis_len {
                out[idx(j)] = out[idx(j)].div(sum);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t2(rows: usize, cols: usize, data: &[f64]) -> Tensor<f64> {
        Tensor::new(vec![rows, cols], data.to_vec()).unwrap()
    }

    /// Scalar triple-loop matmul oracle, kept independent of the kernel.
    fn matmul_oracle(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    s += a[i * k + p] * b[p * n + j];
                }
                c[i * n + j] = s;
            }
        }
        c
    }

    #[test]
    fn matmul_identity_case() {
        let mut tape = Tape::<f64>::new();
        let i2 = tape.leaf(t2(2, 2, &[1.0, 0.0, 0.0, 1.0]), false);
        let x = tape.leaf(t2(2, 2, &[3.0, 4.0, 5.0, 6.0]), false);
        let y = tape.matmul(i2, x).unwrap();
        assert_eq!(tape.value(y).data(), &[3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn matmul_hand_arithmetic_matches_oracle() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [0.0, 1.0, 1.0, 0.0];
        let mut tape = Tape::<f64>::new();
        let av = tape.leaf(t2(2, 2, &a), false);
        let bv = tape.leaf(t2(2, 2, &b), false);
        let y = tape.matmul(av, bv).unwrap();
        assert_eq!(tape.value(y).data(), &[2.0, 1.0, 4.0, 3.0]);
        assert_eq!(tape.value(y).data(), matmul_oracle(&a, &b, 2, 2, 2).as_slice());
    }

    #[test]
    fn matmul_zero_case() {
        let mut tape = Tape::<f64>::new();
        let z = tape.leaf(Tensor::zeros(&[2, 3]), false);
        let b = tape.leaf(Tensor::full(&[3, 4], 0.7), false);
        let y = tape.matmul(z, b).unwrap();
        assert_eq!(tape.shape(y), &[2, 4]);
        assert!(tape.value(y).data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::zeros(&[2, 3]), false);
        let b = tape.leaf(Tensor::zeros(&[4, 5]), false);
        let err = tape.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 5]"), "{msg}");
    }

    #[test]
    fn elementwise_examples() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::from_vec(vec![1.0, 2.0]), false);
        let b = tape.leaf(Tensor::from_vec(vec![3.0, 4.0]), false);
        let s = tape.add(a, b).unwrap();
        assert_eq!(tape.value(s).data(), &[4.0, 6.0]);

        let zero = tape.leaf(Tensor::from_vec(vec![0.0]), false);
        let g = tape.gelu(zero).unwrap();
        assert_eq!(tape.value(g).data(), &[0.0]);

        // [[1,2]] * scalar-2 broadcast.
        let x = tape.leaf(t2(1, 2, &[1.0, 2.0]), false);
        let two = tape.leaf(Tensor::scalar(2.0), false);
        let m = tape.mul(x, two).unwrap();
        assert_eq!(tape.value(m).data(), &[2.0, 4.0]);
        assert_eq!(tape.shape(m), &[1, 2]);
    }

    #[test]
    fn elementwise_incompatible_shapes_error() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::zeros(&[2, 3]), false);
        let b = tape.leaf(Tensor::zeros(&[2, 4]), false);
        assert!(tape.add(a, b).is_err());
    }

    #[test]
    fn log_negative_is_domain_error() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::from_vec(vec![-1.0]), false);
        assert!(matches!(
            tape.unary(UnaryKind::Log, a),
            Err(crate::error::Error::Domain(_))
        ));
        assert!(matches!(
            tape.unary(UnaryKind::Sqrt, a),
            Err(crate::error::Error::Domain(_))
        ));
    }

    #[test]
    fn softmax_examples() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::from_vec(vec![0.0, 0.0, 0.0]), false);
        let s = tape.softmax(a, 0).unwrap();
        for &v in tape.value(s).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }

        let b = tape.leaf(Tensor::from_vec(vec![1000.0, 0.0]), false);
        let s = tape.softmax(b, 0).unwrap();
        assert!((tape.value(s).data()[0] - 1.0).abs() < 1e-12);
        assert!(tape.value(s).data()[1].abs() < 1e-12);

        // [ln 2, 0] -> [2/3, 1/3]
        let c = tape.leaf(Tensor::from_vec(vec![2.0f64.ln(), 0.0]), false);
        let s = tape.softmax(c, 0).unwrap();
        assert!((tape.value(s).data()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((tape.value(s).data()[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn rms_norm_constant_vector_gives_signs() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t2(1, 4, &[-2.5, -2.5, -2.5, -2.5]), false);
        let gain = tape.leaf(Tensor::full(&[4], 1.0), false);
        let y = tape.rms_norm(x, gain, 1e-12).unwrap();
        for &v in tape.value(y).data() {
            assert!((v + 1.0).abs() < 1e-6, "{v}");
        }
    }

    #[test]
    fn concat_shapes() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::zeros(&[2, 3]), false);
        let b = tape.leaf(Tensor::zeros(&[2, 5]), false);
        let c = tape.concat(&[a, b], 1).unwrap();
        assert_eq!(tape.shape(c), &[2, 8]);
    }

    #[test]
    fn mse_examples() {
        let mut tape = Tape::<f64>::new();
        let p = tape.leaf(Tensor::from_vec(vec![1.0, 2.0]), false);
        let l = tape.mse_loss(p, p).unwrap();
        assert_eq!(tape.value(l).item(), 0.0);

        let a = tape.leaf(Tensor::from_vec(vec![2.0]), false);
        let b = tape.leaf(Tensor::from_vec(vec![0.0]), false);
        let l = tape.mse_loss(a, b).unwrap();
        assert_eq!(tape.value(l).item(), 4.0);

        // ([1,3] vs [0,0]) -> (1 + 9) / 2 = 5
        let a = tape.leaf(Tensor::from_vec(vec![1.0, 3.0]), false);
        let b = tape.leaf(Tensor::from_vec(vec![0.0, 0.0]), false);
        let l = tape.mse_loss(a, b).unwrap();
        assert_eq!(tape.value(l).item(), 5.0);
    }

    #[test]
    fn backward_square_at_three() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_vec(vec![3.0]), true);
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum_all(sq).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn backward_linear_matches_finite_difference() {
        // loss = sum(W.x) at W = 0, x = [1, 2]: dW rows are [1, 2].
        let build = |w_data: Vec<f64>| -> f64 {
            let mut tape = Tape::<f64>::new();
            let w = tape.leaf(t2(2, 2, &w_data), true);
            let x = tape.leaf(t2(2, 1, &[1.0, 2.0]), false);
            let y = tape.matmul(w, x).unwrap();
            let loss = tape.sum_all(y).unwrap();
            tape.value(loss).item()
        };
        let mut tape = Tape::<f64>::new();
        let w = tape.leaf(t2(2, 2, &[0.0; 4]), true);
        let x = tape.leaf(t2(2, 1, &[1.0, 2.0]), false);
        let y = tape.matmul(w, x).unwrap();
        let loss = tape.sum_all(y).unwrap();
        tape.backward(loss).unwrap();
        let analytic = tape.grad(w).unwrap();
        assert_eq!(analytic.data(), &[1.0, 2.0, 1.0, 2.0]);
        // Central finite differences as an independent oracle.
        let h = 1e-5;
        for i in 0..4 {
            let mut plus = vec![0.0; 4];
            plus[i] += h;
            let mut minus = vec![0.0; 4];
            minus[i] -= h;
            let fd = (build(plus) - build(minus)) / (2.0 * h);
            assert!((fd - analytic.data()[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn backward_accumulates_reuse() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_vec(vec![1.0]), true);
        let y = tape.add(x, x).unwrap();
        let loss = tape.sum_all(y).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[2.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_vec(vec![1.0, 2.0]), true);
        let err = tape.backward(x).unwrap_err();
        assert!(matches!(err, crate::error::Error::Contract(_)));
    }

    #[test]
    fn non_participating_leaf_gets_zero_grad() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_vec(vec![2.0]), true);
        let unused = tape.leaf(Tensor::from_vec(vec![5.0, 6.0]), true);
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum_all(sq).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(unused).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn embedding_gathers_and_scatters() {
        let mut tape = Tape::<f64>::new();
        let table = tape.leaf(t2(3, 2, &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]), true);
        let out = tape.embedding(table, &[2, 0, 2]).unwrap();
        assert_eq!(tape.value(out).data(), &[4.0, 5.0, 0.0, 1.0, 4.0, 5.0]);
        let loss = tape.sum_all(out).unwrap();
        tape.backward(loss).unwrap();
        // Row 2 was used twice, row 0 once, row 1 never.
        assert_eq!(tape.grad(table).unwrap().data(), &[1.0, 1.0, 0.0, 0.0, 2.0, 2.0]);
    }

    #[test]
    fn frozen_branch_receives_no_grad() {
        let mut tape = Tape::<f64>::new();
        let frozen = tape.leaf(t2(2, 2, &[1.0, 2.0, 3.0, 4.0]), false);
        let x = tape.leaf(t2(2, 1, &[1.0, 1.0]), true);
        let y = tape.matmul(frozen, x).unwrap();
        let loss = tape.sum_all(y).unwrap();
        tape.backward(loss).unwrap();
        assert!(tape.grad(frozen).is_none());
        assert_eq!(tape.grad(x).unwrap().data(), &[4.0, 6.0]);
    }

    #[test]
    fn identical_op_sequences_are_bitwise_identical() {
        let run = || -> Vec<f64> {
            let mut tape = Tape::<f64>::new();
            let a = tape.leaf(t2(3, 3, &[0.3, -1.2, 0.7, 2.0, 0.01, -0.5, 1.1, 0.0, -2.2]), false);
            let b = tape.leaf(t2(3, 3, &[1.0, 0.5, -0.25, 0.125, 2.0, -1.0, 0.75, 0.3, 0.9]), false);
            let c = tape.matmul(a, b).unwrap();
            let g = tape.gelu(c).unwrap();
            let s = tape.softmax(g, 1).unwrap();
            tape.value(s).data().to_vec()
        };
        let x = run();
        let y = run();
        assert!(x.iter().zip(y.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}
