//! Predict-compute-correct along the sequence axis.
//!
//! Only every `stride`-th position goes through the layer. Each position `i`
//! is anchored to the sampled position `⌊i/stride⌋·stride` at or before it.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::transformer::SeqShape;

fn default_stride() -> usize {
    4
}

/// Where and how strongly to subsample.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeqAltUpConfig {
    #[serde(default = "default_stride")]
    pub stride: usize,
    /// Zero-based layers that subsample. Defaults to every layer except the
    /// first and the last.
    #[serde(default)]
    pub layers: Option<Vec<usize>>,
}

impl Default for SeqAltUpConfig {
    fn default() -> Self {
        SeqAltUpConfig {
            stride: default_stride(),
            layers: None,
        }
    }
}

impl SeqAltUpConfig {
    pub fn validate(&self, n_layers: usize) -> Result<()> {
        if self.stride == 0 {
            return Err(Error::Config("seq.stride must be at least 1".into()));
        }
        if let Some(bad) = self.layers.iter().flatten().find(|&&l| l >= n_layers) {
            return Err(Error::Config(format!("seq.layers entry {bad} >= n_layers {n_layers}")));
        }
        Ok(())
    }

    pub fn applies_to(&self, layer: usize, n_layers: usize) -> bool {
        match &self.layers {
            Some(list) => list.contains(&layer),
            None => layer >= 1 && layer + 1 < n_layers,
        }
    }
}

/// Trainable scalars of one subsampling layer: prediction weights for the
/// position itself and for its anchor, and the correction gain.
#[derive(Clone, Copy, Debug)]
pub struct SeqAltUpParams {
    pub self_weight: ParamId,
    pub anchor_weight: ParamId,
    pub gain: ParamId,
}

/// [`SeqAltUpParams`] as graph nodes.
#[derive(Clone, Copy, Debug)]
pub struct SeqAltUpNodes {
    pub self_weight: NodeId,
    pub anchor_weight: NodeId,
    pub gain: NodeId,
}

impl SeqAltUpParams {
    /// Registers `(1, 0, 1)`, under which sampled positions receive the layer
    /// output and the others their input plus the anchor's change.
    pub fn init<S: Scalar>(store: &mut ParamStore<S>, prefix: &str) -> Self {
        SeqAltUpParams {
            self_weight: store.add(format!("{prefix}.seq_self"), Tensor::ones(&[1])),
            anchor_weight: store.add(format!("{prefix}.seq_anchor"), Tensor::zeros(&[1])),
            gain: store.add(format!("{prefix}.seq_gain"), Tensor::ones(&[1])),
        }
    }

    pub fn bind(&self, b: &Bound) -> SeqAltUpNodes {
        SeqAltUpNodes {
            self_weight: b[self.self_weight],
            anchor_weight: b[self.anchor_weight],
            gain: b[self.gain],
        }
    }

    pub const COUNT: usize = 3;
}

/// Row bookkeeping for a strided subsequence of a `[batch·len, d]` matrix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Subsample {
    /// Rows of the full matrix that are processed.
    pub sampled: Vec<usize>,
    /// For every full row, its anchor's row in the subsampled matrix.
    pub anchor_in_sub: Vec<usize>,
    /// For every full row, its anchor's row in the full matrix.
    pub anchor_in_full: Vec<usize>,
    /// Layout of the subsampled matrix.
    pub shape: SeqShape,
}

impl Subsample {
    pub fn new(shape: SeqShape, stride: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::InvalidArgument("stride must be at least 1".into()));
        }
        if shape.len == 0 || shape.batch == 0 {
            return Err(Error::InvalidArgument("empty sequence".into()));
        }
        let sub_len = shape.len.div_ceil(stride);
        let mut sampled = Vec::with_capacity(shape.batch * sub_len);
        let mut anchor_in_sub = Vec::with_capacity(shape.rows());
        let mut anchor_in_full = Vec::with_capacity(shape.rows());
        for b in 0..shape.batch {
            for s in 0..sub_len {
                sampled.push(b * shape.len + s * stride);
            }
            for i in 0..shape.len {
                anchor_in_sub.push(b * sub_len + i / stride);
                anchor_in_full.push(b * shape.len + (i / stride) * stride);
            }
        }
        Ok(Subsample {
            sampled,
            anchor_in_sub,
            anchor_in_full,
            shape: SeqShape {
                batch: shape.batch,
                len: sub_len,
            },
        })
    }

    fn is_sampled(&self, row: usize) -> bool {
        self.anchor_in_full[row] == row
    }
}

fn check_rows<S: Scalar>(g: &Graph<S>, x: NodeId, shape: SeqShape, op: &'static str) -> Result<()> {
    let s = g.shape(x);
    if s.len() != 2 || s[0] != shape.rows() {
        return Err(Error::ShapeMismatch {
            op,
            lhs: s.to_vec(),
            rhs: vec![shape.batch, shape.len],
        });
    }
    Ok(())
}

fn run_inner<S, F>(g: &mut Graph<S>, x: NodeId, sub: &Subsample, inner: F) -> Result<NodeId>
where
    S: Scalar,
    F: FnOnce(&mut Graph<S>, NodeId, SeqShape) -> Result<NodeId>,
{
    let xs = g.gather_rows(x, &sub.sampled)?;
    let ys = inner(g, xs, sub.shape)?;
    if g.shape(ys) != g.shape(xs) {
        return Err(Error::ShapeMismatch {
            op: "subsampled inner layer",
            lhs: g.shape(xs).to_vec(),
            rhs: g.shape(ys).to_vec(),
        });
    }
    Ok(ys)
}

/// Sequence-axis predict-compute-correct.
///
/// ```text
/// pred_i = self_weight · x_i + anchor_weight · x_{a(i)}
/// y_i    = pred_i + gain · (inner(x_sampled)_{a(i)} − pred_{a(i)})
/// ```
///
/// with `a(i) = ⌊i/stride⌋·stride` within each sequence. `inner` receives the
/// `[batch·⌈len/stride⌉, d]` subsequence and its layout, and is called once.
pub fn seq_altup_forward<S, F>(
    g: &mut Graph<S>,
    x: NodeId,
    p: &SeqAltUpNodes,
    stride: usize,
    shape: SeqShape,
    inner: F,
) -> Result<NodeId>
where
    S: Scalar,
    F: FnOnce(&mut Graph<S>, NodeId, SeqShape) -> Result<NodeId>,
{
    check_rows(g, x, shape, "seq_altup_forward")?;
    let sub = Subsample::new(shape, stride)?;

    let own = g.scale_by(x, p.self_weight)?;
    let anchors = g.gather_rows(x, &sub.anchor_in_full)?;
    let anchors = g.scale_by(anchors, p.anchor_weight)?;
    let pred = g.add(own, anchors)?;

    let computed = run_inner(g, x, &sub, inner)?;

    let pred_anchor = g.gather_rows(pred, &sub.anchor_in_full)?;
    let pred_anchor = g.scale_by(pred_anchor, p.gain)?;
    let base = g.sub(pred, pred_anchor)?;
    let computed = g.gather_rows(computed, &sub.anchor_in_sub)?;
    let delta = g.scale_by(computed, p.gain)?;
    g.add(base, delta)
}

/// Sampled positions take the layer output (computed on the subsequence);
/// every other position is passed through unchanged.
pub fn stride_and_skip_forward<S, F>(
    g: &mut Graph<S>,
    x: NodeId,
    stride: usize,
    shape: SeqShape,
    inner: F,
) -> Result<NodeId>
where
    S: Scalar,
    F: FnOnce(&mut Graph<S>, NodeId, SeqShape) -> Result<NodeId>,
{
    check_rows(g, x, shape, "stride_and_skip_forward")?;
    let sub = Subsample::new(shape, stride)?;
    let computed = run_inner(g, x, &sub, inner)?;
    if stride == 1 {
        return Ok(computed);
    }
    let rows = shape.rows();
    let mask: Vec<S> = (0..rows)
        .map(|r| if sub.is_sampled(r) { S::one() } else { S::zero() })
        .collect();
    let keep: Vec<S> = mask.iter().map(|&m| S::one() - m).collect();
    let mask = g.constant(Tensor::new(vec![rows], mask)?);
    let keep = g.constant(Tensor::new(vec![rows], keep)?);

    let spread = g.gather_rows(computed, &sub.anchor_in_sub)?;
    let spread = g.scale_rows(spread, mask)?;
    let passed = g.scale_rows(x, keep)?;
    g.add(passed, spread)
}

/// Windows `[j·stride, min((j+1)·stride, len))` of every sequence.
pub fn pool_windows(shape: SeqShape, stride: usize) -> Result<Vec<(usize, usize)>> {
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be at least 1".into()));
    }
    if shape.len == 0 || shape.batch == 0 {
        return Err(Error::InvalidArgument("empty sequence".into()));
    }
    let mut out = Vec::with_capacity(shape.batch * shape.len.div_ceil(stride));
    for b in 0..shape.batch {
        let base = b * shape.len;
        for start in (0..shape.len).step_by(stride) {
            out.push((base + start, base + (start + stride).min(shape.len)));
        }
    }
    Ok(out)
}

/// Mean over non-overlapping windows of `stride` positions. Returns the
/// pooled matrix and its layout.
pub fn average_pool_seq<S: Scalar>(
    g: &mut Graph<S>,
    x: NodeId,
    stride: usize,
    shape: SeqShape,
) -> Result<(NodeId, SeqShape)> {
    check_rows(g, x, shape, "average_pool_seq")?;
    let windows = pool_windows(shape, stride)?;
    let pooled = g.segment_mean(x, &windows)?;
    Ok((
        pooled,
        SeqShape {
            batch: shape.batch,
            len: shape.len.div_ceil(stride),
        },
    ))
}
