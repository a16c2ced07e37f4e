//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Graph`] is a tape: every primitive appends a node holding its output
//! value and the ids of its inputs, so node order is already topological.
//! [`Graph::backward`] walks the tape in reverse and accumulates gradients
//! into every node that requires them.
//!
//! Broadcasting is limited to leading-dimension expansion: in `add`, `sub`
//! and `mul` the right operand may have a shape equal to a trailing suffix of
//! the left operand's shape. Everything else needs an explicit reshape.

mod backward;
mod gradcheck;
mod kernels;

use std::sync::atomic::{AtomicUsize, Ordering};

pub use gradcheck::{grad_check, GradCheckReport};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

static NEXT_GRAPH_ID: AtomicUsize = AtomicUsize::new(0);

/// Handle to a node of one particular [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId {
    graph: usize,
    index: usize,
}

impl NodeId {
    pub fn index(self) -> usize {
        self.index
    }
}

/// Recorded primitive application. Inputs always precede the node itself.
#[derive(Clone, Debug)]
pub(crate) enum Op<S> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, S),
    ScaleBy(usize, usize),
    MatMul(usize, usize),
    TransposeLast2(usize),
    Reshape(usize),
    Relu(usize),
    Gelu(usize),
    Sigmoid(usize),
    Log(usize),
    Softmax(usize),
    LayerNorm { input: usize, scale: Option<usize>, eps: S },
    GatherRows { table: usize, rows: Vec<usize> },
    SegmentMean { input: usize, segments: Vec<(usize, usize)> },
    Concat(Vec<usize>),
    SliceLast { input: usize, start: usize },
    Sum(usize),
    Mean(usize),
    RowwiseMatMul { x: usize, w: usize },
    ScaleRows { x: usize, w: usize },
    PickPerRow { x: usize, cols: Vec<usize> },
    CrossEntropy { logits: usize, targets: Vec<usize> },
}

impl<S> Op<S> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::ScaleBy(..) => "scale_by",
            Op::MatMul(..) => "matmul",
            Op::TransposeLast2(..) => "transpose",
            Op::Reshape(..) => "reshape",
            Op::Relu(..) => "relu",
            Op::Gelu(..) => "gelu",
            Op::Sigmoid(..) => "sigmoid",
            Op::Log(..) => "log",
            Op::Softmax(..) => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::GatherRows { .. } => "gather_rows",
            Op::SegmentMean { .. } => "segment_mean",
            Op::Concat(..) => "concat",
            Op::SliceLast { .. } => "slice_last",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::RowwiseMatMul { .. } => "rowwise_matmul",
            Op::ScaleRows { .. } => "scale_rows",
            Op::PickPerRow { .. } => "pick_per_row",
            Op::CrossEntropy { .. } => "cross_entropy",
        }
    }
}

pub(crate) struct Node<S> {
    pub(crate) value: Tensor<S>,
    pub(crate) op: Op<S>,
    pub(crate) requires_grad: bool,
}

/// Tape of primitive applications plus the gradients of the last backward pass.
pub struct Graph<S> {
    id: usize,
    pub(crate) nodes: Vec<Node<S>>,
    grads: Vec<Option<Tensor<S>>>,
    macs: u64,
    check_finite: bool,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Graph {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            grads: Vec::new(),
            macs: 0,
            check_finite: cfg!(debug_assertions),
        }
    }

    /// Toggle the post-hoc non-finite check applied to every new node.
    pub fn set_check_finite(&mut self, on: bool) {
        self.check_finite = on;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Multiply-accumulates performed by matrix products so far.
    pub fn macs(&self) -> u64 {
        self.macs
    }

    /// Trainable input.
    pub fn param(&mut self, value: Tensor<S>) -> NodeId {
        self.push_raw(value, Op::Leaf, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<S>) -> NodeId {
        self.push_raw(value, Op::Leaf, false)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<S> {
        &self.nodes[self.idx(id).expect("foreign node id")].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.value(id).shape()
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.index].requires_grad
    }

    /// Gradient from the most recent [`Graph::backward`], if this node got one.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor<S>> {
        self.idx(id).ok()?;
        self.grads.get(id.index).and_then(Option::as_ref)
    }

    fn idx(&self, id: NodeId) -> Result<usize> {
        if id.graph != self.id || id.index >= self.nodes.len() {
            return Err(Error::NotInGraph(id.index));
        }
        Ok(id.index)
    }

    fn node_id(&self, index: usize) -> NodeId {
        NodeId {
            graph: self.id,
            index,
        }
    }

    fn push_raw(&mut self, value: Tensor<S>, op: Op<S>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.node_id(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, inputs: &[usize]) -> Result<NodeId> {
        if self.check_finite && !value.is_finite() {
            return Err(Error::NonFinite(format!("output of {}", op.name())));
        }
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        Ok(self.push_raw(value, op, requires_grad))
    }

    fn val(&self, i: usize) -> &Tensor<S> {
        &self.nodes[i].value
    }

    // ---- elementwise -------------------------------------------------

    fn check_suffix(&self, op: &'static str, a: usize, b: usize) -> Result<()> {
        let (sa, sb) = (self.val(a).shape(), self.val(b).shape());
        if sa.ends_with(sb) && !(sb.is_empty() && !sa.is_empty()) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            })
        }
    }

    fn binary(
        &mut self,
        a: NodeId,
        b: NodeId,
        name: &'static str,
        f: impl Fn(S, S) -> S,
        op: fn(usize, usize) -> Op<S>,
    ) -> Result<NodeId> {
        let (a, b) = (self.idx(a)?, self.idx(b)?);
        self.check_suffix(name, a, b)?;
        let (va, vb) = (self.val(a), self.val(b));
        let period = vb.numel();
        let data = va
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, vb.data()[i % period]))
            .collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        self.push(out, op(a, b), &[a, b])
    }

    /// `a + b`, with `b` repeated over leading dimensions of `a`.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub)
    }

    /// Elementwise product, broadcasting `b` like [`Graph::add`].
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul)
    }

    /// Multiply by a fixed constant.
    pub fn scale(&mut self, a: NodeId, c: S) -> Result<NodeId> {
        let a = self.idx(a)?;
        let out = self.val(a).map(|x| x * c);
        self.push(out, Op::Scale(a, c), &[a])
    }

    /// Multiply every entry of `a` by the single entry of `s` (trainable scalar).
    pub fn scale_by(&mut self, a: NodeId, s: NodeId) -> Result<NodeId> {
        let (a, s) = (self.idx(a)?, self.idx(s)?);
        if self.val(s).numel() != 1 {
            return Err(Error::ShapeMismatch {
                op: "scale_by",
                lhs: self.val(a).shape().to_vec(),
                rhs: self.val(s).shape().to_vec(),
            });
        }
        let c = self.val(s).item();
        let out = self.val(a).map(|x| x * c);
        self.push(out, Op::ScaleBy(a, s), &[a, s])
    }

    fn unary(&mut self, a: NodeId, f: impl Fn(S) -> S, op: fn(usize) -> Op<S>) -> Result<NodeId> {
        let a = self.idx(a)?;
        let out = self.val(a).map(f);
        self.push(out, op(a), &[a])
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, |x| if x > S::zero() { x } else { S::zero() }, Op::Relu)
    }

    /// Exact GELU, `x·Φ(x)`.
    pub fn gelu(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, kernels::gelu, Op::Gelu)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, |x| S::one() / (S::one() + (-x).exp()), Op::Sigmoid)
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, S::ln, Op::Log)
    }

    // ---- contractions ------------------------------------------------

    /// Matrix product over the last two axes.
    ///
    /// `b` of rank 2 is shared by every leading index of `a`; `b` of rank 3
    /// requires `a` of rank 3 with the same batch size.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (a, b) = (self.idx(a)?, self.idx(b)?);
        let (sa, sb) = (self.val(a).shape(), self.val(b).shape());
        let mismatch = || Error::ShapeMismatch {
            op: "matmul",
            lhs: sa.to_vec(),
            rhs: sb.to_vec(),
        };
        if sa.len() < 2 {
            return Err(mismatch());
        }
        let k = sa[sa.len() - 1];
        let (out, added) = match sb.len() {
            2 if sb[0] == k => {
                let n = sb[1];
                let m = self.val(a).numel() / k;
                let mut data = vec![S::zero(); m * n];
                kernels::mm_nn(self.val(a).data(), self.val(b).data(), &mut data, m, k, n);
                let mut shape = sa[..sa.len() - 1].to_vec();
                shape.push(n);
                (Tensor::new(shape, data)?, m * k * n)
            }
            3 if sa.len() == 3 && sb[0] == sa[0] && sb[1] == k => {
                let (batch, m, n) = (sa[0], sa[1], sb[2]);
                let mut data = vec![S::zero(); batch * m * n];
                for t in 0..batch {
                    kernels::mm_nn(
                        &self.val(a).data()[t * m * k..(t + 1) * m * k],
                        &self.val(b).data()[t * k * n..(t + 1) * k * n],
                        &mut data[t * m * n..(t + 1) * m * n],
                        m,
                        k,
                        n,
                    );
                }
                (Tensor::new(vec![batch, m, n], data)?, batch * m * k * n)
            }
            _ => return Err(mismatch()),
        };
        self.macs += added as u64;
        self.push(out, Op::MatMul(a, b), &[a, b])
    }

    /// Swap the last two axes.
    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let a = self.idx(a)?;
        let sa = self.val(a).shape();
        if sa.len() < 2 {
            return Err(Error::ShapeMismatch {
                op: "transpose",
                lhs: sa.to_vec(),
                rhs: vec![],
            });
        }
        let (r, c) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let data = kernels::transpose_last2(self.val(a).data(), r, c);
        let mut shape = sa.to_vec();
        let n = shape.len();
        shape.swap(n - 2, n - 1);
        let out = Tensor::new(shape, data)?;
        self.push(out, Op::TransposeLast2(a), &[a])
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let a = self.idx(a)?;
        let out = self.val(a).clone().reshape(shape)?;
        self.push(out, Op::Reshape(a), &[a])
    }

    /// Per-row product `out[r] = x[r] · W_r` with `W_r` the `rows × cols`
    /// matrix stored row-major in `w[r]`.
    pub fn rowwise_matmul(&mut self, x: NodeId, w: NodeId, cols: usize) -> Result<NodeId> {
        let (x, w) = (self.idx(x)?, self.idx(w)?);
        let (sx, sw) = (self.val(x).shape(), self.val(w).shape());
        let ok = sx.len() == 2 && sw.len() == 2 && sx[0] == sw[0] && cols > 0 && sw[1] == sx[1] * cols;
        if !ok {
            return Err(Error::ShapeMismatch {
                op: "rowwise_matmul",
                lhs: sx.to_vec(),
                rhs: sw.to_vec(),
            });
        }
        let (r, inner) = (sx[0], sx[1]);
        let mut data = vec![S::zero(); r * cols];
        for row in 0..r {
            kernels::mm_nn(
                &self.val(x).data()[row * inner..(row + 1) * inner],
                &self.val(w).data()[row * inner * cols..(row + 1) * inner * cols],
                &mut data[row * cols..(row + 1) * cols],
                1,
                inner,
                cols,
            );
        }
        self.macs += (r * inner * cols) as u64;
        let out = Tensor::new(vec![r, cols], data)?;
        self.push(out, Op::RowwiseMatMul { x, w }, &[x, w])
    }

    /// `out[r, :] = x[r, :] * w[r]` for `x: [R, d]`, `w: [R]`.
    pub fn scale_rows(&mut self, x: NodeId, w: NodeId) -> Result<NodeId> {
        let (x, w) = (self.idx(x)?, self.idx(w)?);
        let (sx, sw) = (self.val(x).shape(), self.val(w).shape());
        if sx.len() != 2 || sw != [sx[0]] {
            return Err(Error::ShapeMismatch {
                op: "scale_rows",
                lhs: sx.to_vec(),
                rhs: sw.to_vec(),
            });
        }
        let d = sx[1];
        let (vx, vw) = (self.val(x).data(), self.val(w).data());
        let data = vx
            .iter()
            .enumerate()
            .map(|(i, &v)| v * vw[i / d])
            .collect();
        let out = Tensor::new(sx.to_vec(), data)?;
        self.push(out, Op::ScaleRows { x, w }, &[x, w])
    }

    /// `out[r] = x[r, cols[r]]` for `x: [R, n]`.
    pub fn pick_per_row(&mut self, x: NodeId, cols: &[usize]) -> Result<NodeId> {
        let x = self.idx(x)?;
        let sx = self.val(x).shape();
        if sx.len() != 2 || sx[0] != cols.len() {
            return Err(Error::ShapeMismatch {
                op: "pick_per_row",
                lhs: sx.to_vec(),
                rhs: vec![cols.len()],
            });
        }
        let n = sx[1];
        if let Some((position, &index)) = cols.iter().enumerate().find(|(_, &c)| c >= n) {
            return Err(Error::IndexOutOfRange {
                what: "pick_per_row",
                position,
                index,
                bound: n,
            });
        }
        let data = cols
            .iter()
            .enumerate()
            .map(|(r, &c)| self.val(x).data()[r * n + c])
            .collect();
        let out = Tensor::new(vec![cols.len()], data)?;
        self.push(out, Op::PickPerRow { x, cols: cols.to_vec() }, &[x])
    }

    // ---- normalisation -------------------------------------------------

    /// Softmax over the last axis. With `causal`, the input must end in a
    /// square `[T, T]` block and entry `(i, j)` is excluded for `j > i`.
    pub fn softmax(&mut self, a: NodeId, causal: bool) -> Result<NodeId> {
        let a = self.idx(a)?;
        let sa = self.val(a).shape();
        let w = self.val(a).last_dim();
        let square = if causal {
            if sa.len() < 2 || sa[sa.len() - 2] != w {
                return Err(Error::ShapeMismatch {
                    op: "softmax(causal)",
                    lhs: sa.to_vec(),
                    rhs: vec![w, w],
                });
            }
            Some(w)
        } else {
            None
        };
        let out = kernels::softmax_rows(self.val(a), square);
        self.push(out, Op::Softmax(a), &[a])
    }

    /// Layer normalisation over the last axis, optionally scaled by a
    /// trainable vector of that width.
    pub fn layer_norm(&mut self, a: NodeId, scale: Option<NodeId>, eps: S) -> Result<NodeId> {
        let a = self.idx(a)?;
        let scale = scale.map(|s| self.idx(s)).transpose()?;
        let w = self.val(a).last_dim();
        if let Some(s) = scale {
            if self.val(s).shape() != [w] {
                return Err(Error::ShapeMismatch {
                    op: "layer_norm",
                    lhs: self.val(a).shape().to_vec(),
                    rhs: self.val(s).shape().to_vec(),
                });
            }
        }
        let (xhat, _) = kernels::normalize_rows(self.val(a), eps);
        let out = match scale {
            Some(s) => {
                let g = self.val(s).data();
                let data = xhat
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| v * g[i % w])
                    .collect();
                Tensor::new(xhat.shape().to_vec(), data)?
            }
            None => xhat,
        };
        let inputs: Vec<usize> = std::iter::once(a).chain(scale).collect();
        self.push(out, Op::LayerNorm { input: a, scale, eps }, &inputs)
    }

    // ---- indexing ----------------------------------------------------------

    /// Rows of `table` (viewed as `[rows, last_dim]`) selected by `rows`.
    pub fn gather_rows(&mut self, table: NodeId, rows: &[usize]) -> Result<NodeId> {
        let table = self.idx(table)?;
        let t = self.val(table);
        let (n, w) = (t.rows(), t.last_dim());
        if t.rank() < 1 || rows.is_empty() {
            return Err(Error::InvalidArgument("gather_rows needs a non-empty index list".into()));
        }
        let mut data = Vec::with_capacity(rows.len() * w);
        for (position, &r) in rows.iter().enumerate() {
            if r >= n {
                return Err(Error::IndexOutOfRange {
                    what: "gather_rows",
                    position,
                    index: r,
                    bound: n,
                });
            }
            data.extend_from_slice(t.row(r));
        }
        let out = Tensor::new(vec![rows.len(), w], data)?;
        self.push(out, Op::GatherRows { table, rows: rows.to_vec() }, &[table])
    }

    /// Row `j` of the output is the mean of rows `start..end` of the
    /// `[rows, width]` input for the `j`-th segment.
    pub fn segment_mean(&mut self, a: NodeId, segments: &[(usize, usize)]) -> Result<NodeId> {
        let a = self.idx(a)?;
        let t = self.val(a);
        let (n, w) = (t.rows(), t.last_dim());
        if t.rank() != 2 || segments.is_empty() {
            return Err(Error::InvalidArgument("segment_mean needs a matrix and segments".into()));
        }
        let mut data = Vec::with_capacity(segments.len() * w);
        for &(s, e) in segments {
            if s >= e || e > n {
                return Err(Error::InvalidArgument(format!(
                    "segment {s}..{e} invalid for {n} rows"
                )));
            }
            let inv = S::one() / S::of((e - s) as f64);
            for col in 0..w {
                let mut acc = S::zero();
                for r in s..e {
                    acc += t.data()[r * w + col];
                }
                data.push(acc * inv);
            }
        }
        let out = Tensor::new(vec![segments.len(), w], data)?;
        self.push(out, Op::SegmentMean { input: a, segments: segments.to_vec() }, &[a])
    }

    /// Concatenate along the last axis; all leading dimensions must agree.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let idx: Vec<usize> = parts.iter().map(|&p| self.idx(p)).collect::<Result<_>>()?;
        let first = *idx
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?;
        let lead = &self.val(first).shape()[..self.val(first).rank().saturating_sub(1)];
        for &i in &idx[1..] {
            let s = self.val(i).shape();
            if s.len() != lead.len() + 1 || &s[..lead.len()] != lead {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: self.val(first).shape().to_vec(),
                    rhs: s.to_vec(),
                });
            }
        }
        let rows = self.val(first).rows();
        let total: usize = idx.iter().map(|&i| self.val(i).last_dim()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &i in &idx {
                data.extend_from_slice(self.val(i).row(r));
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        let out = Tensor::new(shape, data)?;
        self.push(out, Op::Concat(idx.clone()), &idx)
    }

    /// Columns `start..start + len` of the last axis.
    pub fn slice_last(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let a = self.idx(a)?;
        let t = self.val(a);
        let w = t.last_dim();
        if t.rank() == 0 || len == 0 || start + len > w {
            return Err(Error::ShapeMismatch {
                op: "slice_last",
                lhs: t.shape().to_vec(),
                rhs: vec![start, len],
            });
        }
        let mut data = Vec::with_capacity(t.rows() * len);
        for r in 0..t.rows() {
            data.extend_from_slice(&t.row(r)[start..start + len]);
        }
        let mut shape = t.shape().to_vec();
        *shape.last_mut().expect("rank checked") = len;
        let out = Tensor::new(shape, data)?;
        self.push(out, Op::SliceLast { input: a, start }, &[a])
    }

    /// Split the last axis into `parts` equal contiguous blocks.
    pub fn split_last(&mut self, a: NodeId, parts: usize) -> Result<Vec<NodeId>> {
        let w = self.value(a).last_dim();
        if parts == 0 || w % parts != 0 {
            return Err(Error::ShapeMismatch {
                op: "split_last",
                lhs: self.value(a).shape().to_vec(),
                rhs: vec![parts],
            });
        }
        let width = w / parts;
        (0..parts).map(|j| self.slice_last(a, j * width, width)).collect()
    }

    // ---- reductions --------------------------------------------------------

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let a = self.idx(a)?;
        let s: S = self.val(a).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        let a = self.idx(a)?;
        let t = self.val(a);
        let s: S = t.data().iter().copied().sum::<S>() / S::of(t.numel() as f64);
        self.push(Tensor::scalar(s), Op::Mean(a), &[a])
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of
    /// `logits: [R, V]`, with max-subtraction.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[usize]) -> Result<NodeId> {
        let l = self.idx(logits)?;
        let t = self.val(l);
        if t.rank() != 2 || t.rows() != targets.len() {
            return Err(Error::ShapeMismatch {
                op: "cross_entropy",
                lhs: t.shape().to_vec(),
                rhs: vec![targets.len()],
            });
        }
        let v = t.last_dim();
        let mut total = S::zero();
        for (position, &target) in targets.iter().enumerate() {
            if target >= v {
                return Err(Error::IndexOutOfRange {
                    what: "cross_entropy target",
                    position,
                    index: target,
                    bound: v,
                });
            }
            let row = t.row(position);
            total += kernels::log_sum_exp(row) - row[target];
        }
        let out = Tensor::scalar(total / S::of(targets.len() as f64));
        self.push(out, Op::CrossEntropy { logits: l, targets: targets.to_vec() }, &[l])
    }

    // ---- backward --------------------------------------------------------

    /// Reverse sweep from a scalar `loss`. Afterwards [`Graph::grad`] returns
    /// `∂loss/∂node` for every node on a path from a trainable leaf to `loss`.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        let l = self.idx(loss)?;
        if self.val(l).numel() != 1 || self.val(l).rank() != 0 {
            return Err(Error::NotScalar(self.val(l).shape().to_vec()));
        }
        self.grads = backward::run(&self.nodes, l);
        Ok(())
    }
}

#[cfg(test)]
mod tests;
