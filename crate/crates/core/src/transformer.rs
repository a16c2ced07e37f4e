//! Baseline pre-layer-norm transformer layer, embedding lookup and tied
//! language-model head.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ffn_hidden: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("d_model", self.d_model),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("ffn_hidden", self.ffn_hidden),
            ("vocab_size", self.vocab_size),
            ("max_seq_len", self.max_seq_len),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("model.{name} must be positive")));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "model.d_model ({}) must be divisible by model.n_heads ({})",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// Batch layout of a `[batch * len, width]` activation matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeqShape {
    pub batch: usize,
    pub len: usize,
}

impl SeqShape {
    pub fn rows(self) -> usize {
        self.batch * self.len
    }
}

/// Parameters of one transformer layer of width `d`.
#[derive(Clone, Copy, Debug)]
pub struct LayerParams {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub gate: ParamId,
    pub up: ParamId,
    pub down: ParamId,
    pub ln1: ParamId,
    pub ln2: ParamId,
}

/// [`LayerParams`] resolved to graph nodes.
#[derive(Clone, Copy, Debug)]
pub struct LayerNodes {
    pub wq: NodeId,
    pub wk: NodeId,
    pub wv: NodeId,
    pub wo: NodeId,
    pub gate: NodeId,
    pub up: NodeId,
    pub down: NodeId,
    pub ln1: NodeId,
    pub ln2: NodeId,
}

/// Normal(0, 1/fan_in) matrix initialisation.
pub fn init_matrix<S: Scalar, R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor<S> {
    Tensor::randn(&[rows, cols], 1.0 / (rows as f64).sqrt(), rng)
}

impl LayerParams {
    /// Register a freshly initialised layer under `prefix`.
    pub fn init<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        prefix: &str,
        d: usize,
        ffn_hidden: usize,
        rng: &mut R,
    ) -> Self {
        let mut m = |name: &str, r, c, rng: &mut R| store.add(format!("{prefix}.{name}"), init_matrix(r, c, rng));
        let wq = m("attn_q", d, d, rng);
        let wk = m("attn_k", d, d, rng);
        let wv = m("attn_v", d, d, rng);
        let wo = m("attn_o", d, d, rng);
        let gate = m("ffn_gate", d, ffn_hidden, rng);
        let up = m("ffn_up", d, ffn_hidden, rng);
        let down = m("ffn_down", ffn_hidden, d, rng);
        let ln1 = store.add(format!("{prefix}.ln1"), Tensor::ones(&[d]));
        let ln2 = store.add(format!("{prefix}.ln2"), Tensor::ones(&[d]));
        LayerParams {
            wq,
            wk,
            wv,
            wo,
            gate,
            up,
            down,
            ln1,
            ln2,
        }
    }

    pub fn bind(&self, b: &Bound) -> LayerNodes {
        LayerNodes {
            wq: b[self.wq],
            wk: b[self.wk],
            wv: b[self.wv],
            wo: b[self.wo],
            gate: b[self.gate],
            up: b[self.up],
            down: b[self.down],
            ln1: b[self.ln1],
            ln2: b[self.ln2],
        }
    }

    pub fn ids(&self) -> [ParamId; 9] {
        [
            self.wq, self.wk, self.wv, self.wo, self.gate, self.up, self.down, self.ln1, self.ln2,
        ]
    }

    /// Trainable scalars in one layer: `4d² + 3·d·ffn + 2d`.
    pub fn count(d: usize, ffn_hidden: usize) -> usize {
        4 * d * d + 3 * d * ffn_hidden + 2 * d
    }
}

/// Rows of `table` for each token id.
pub fn embed<S: Scalar>(g: &mut Graph<S>, table: NodeId, token_ids: &[usize]) -> Result<NodeId> {
    let vocab = g.shape(table)[0];
    if let Some((position, &id)) = token_ids.iter().enumerate().find(|(_, &id)| id >= vocab) {
        return Err(Error::IndexOutOfRange {
            what: "token id",
            position,
            index: id,
            bound: vocab,
        });
    }
    g.gather_rows(table, token_ids)
}

/// Pre-LN layer: `h = x + Attn(LN(x))`, then `h + FFN(LN(h))` with the
/// gated-GELU feed-forward `down(gelu(z·gate) ⊙ (z·up))`.
///
/// `x` is `[shape.batch * shape.len, d]`; attention runs within each sequence.
pub fn layer_forward<S: Scalar>(
    g: &mut Graph<S>,
    x: NodeId,
    p: &LayerNodes,
    n_heads: usize,
    shape: SeqShape,
    causal: bool,
) -> Result<NodeId> {
    let xs = g.shape(x).to_vec();
    let d = *xs.last().unwrap_or(&0);
    if xs.len() != 2 || xs[0] != shape.rows() || n_heads == 0 || d % n_heads != 0 {
        return Err(Error::ShapeMismatch {
            op: "layer_forward",
            lhs: xs,
            rhs: vec![shape.batch, shape.len, n_heads],
        });
    }
    let eps = S::of(LAYER_NORM_EPS);
    let h = g.layer_norm(x, Some(p.ln1), eps)?;
    let attn = attention(g, h, p, n_heads, shape, causal)?;
    let x1 = g.add(x, attn)?;

    let h2 = g.layer_norm(x1, Some(p.ln2), eps)?;
    let gate = g.matmul(h2, p.gate)?;
    let gate = g.gelu(gate)?;
    let up = g.matmul(h2, p.up)?;
    let hidden = g.mul(gate, up)?;
    let ffn = g.matmul(hidden, p.down)?;
    g.add(x1, ffn)
}

fn attention<S: Scalar>(
    g: &mut Graph<S>,
    h: NodeId,
    p: &LayerNodes,
    n_heads: usize,
    shape: SeqShape,
    causal: bool,
) -> Result<NodeId> {
    let d = g.shape(h)[1];
    let dh = d / n_heads;
    let cube = [shape.batch, shape.len, d];
    let q = g.matmul(h, p.wq)?;
    let q = g.reshape(q, &cube)?;
    let k = g.matmul(h, p.wk)?;
    let k = g.reshape(k, &cube)?;
    let v = g.matmul(h, p.wv)?;
    let v = g.reshape(v, &cube)?;

    let scale = S::one() / S::of(dh as f64).sqrt();
    let mut heads = Vec::with_capacity(n_heads);
    for head in 0..n_heads {
        let (qh, kh, vh) = if n_heads == 1 {
            (q, k, v)
        } else {
            (
                g.slice_last(q, head * dh, dh)?,
                g.slice_last(k, head * dh, dh)?,
                g.slice_last(v, head * dh, dh)?,
            )
        };
        let kt = g.transpose(kh)?;
        let scores = g.matmul(qh, kt)?;
        let scores = g.scale(scores, scale)?;
        let weights = g.softmax(scores, causal)?;
        heads.push(g.matmul(weights, vh)?);
    }
    let merged = if n_heads == 1 { heads[0] } else { g.concat(&heads)? };
    let merged = g.reshape(merged, &[shape.rows(), d])?;
    g.matmul(merged, p.wo)
}

/// Tied output projection: `logits = x · tableᵀ`.
pub fn lm_head<S: Scalar>(g: &mut Graph<S>, x: NodeId, table: NodeId) -> Result<NodeId> {
    let (xs, ts) = (g.shape(x), g.shape(table));
    if xs.last() != ts.last() || ts.len() != 2 {
        return Err(Error::ShapeMismatch {
            op: "lm_head",
            lhs: xs.to_vec(),
            rhs: ts.to_vec(),
        });
    }
    let tt = g.transpose(table)?;
    g.matmul(x, tt)
}

/// Mean next-token negative log-likelihood.
pub fn cross_entropy<S: Scalar>(g: &mut Graph<S>, logits: NodeId, targets: &[usize]) -> Result<NodeId> {
    g.cross_entropy(logits, targets)
}
