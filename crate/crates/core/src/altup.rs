//! Alternating updates: a `K·d`-wide token representation of which only one
//! `d`-wide block passes through the transformer layer. The other blocks are
//! predicted by a learned linear mix of all blocks and then corrected with
//! the observed change of the computed block.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::transformer::{embed, LayerParams, ModelConfig};

/// Which sub-block a layer computes on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockSelection {
    /// Always the given block.
    Same(usize),
    /// Block `layer mod K`.
    Alternating,
}

fn default_gain() -> f64 {
    1.0
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AltUpConfig {
    /// Number of `d`-wide blocks in the widened representation.
    pub expansion: usize,
    pub selection: BlockSelection,
    /// Initial value of every correction gain. The mixing matrix always
    /// starts as the identity.
    #[serde(default = "default_gain")]
    pub gain_init: f64,
}

impl AltUpConfig {
    pub fn new(expansion: usize, selection: BlockSelection) -> Self {
        AltUpConfig {
            expansion,
            selection,
            gain_init: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.expansion == 0 {
            return Err(Error::Config("altup.expansion must be at least 1".into()));
        }
        if let BlockSelection::Same(j) = self.selection {
            if j >= self.expansion {
                return Err(Error::Config(format!(
                    "altup.selection block {j} out of range for expansion {}",
                    self.expansion
                )));
            }
        }
        if !self.gain_init.is_finite() {
            return Err(Error::Config("altup.gain_init must be finite".into()));
        }
        Ok(())
    }
}

/// Block computed at `layer_index` (zero-based).
pub fn select_block(layer_index: usize, cfg: &AltUpConfig) -> usize {
    match cfg.selection {
        BlockSelection::Same(j) => j,
        BlockSelection::Alternating => layer_index % cfg.expansion,
    }
}

/// Per-layer mixing matrix `[K, K]` and gain vector `[K]` around an inner layer.
#[derive(Clone, Copy, Debug)]
pub struct AltUpLayerParams {
    pub mix: ParamId,
    pub gain: ParamId,
    pub inner: LayerParams,
}

impl AltUpLayerParams {
    pub fn init<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        prefix: &str,
        d: usize,
        ffn_hidden: usize,
        cfg: &AltUpConfig,
        rng: &mut R,
    ) -> Self {
        let inner = LayerParams::init(store, prefix, d, ffn_hidden, rng);
        let k = cfg.expansion;
        let mix = store.add(format!("{prefix}.altup_mix"), Tensor::identity(k));
        let gain = store.add(format!("{prefix}.altup_gain"), Tensor::full(&[k], S::of(cfg.gain_init)));
        AltUpLayerParams { mix, gain, inner }
    }

    /// `(mix, gain)` graph nodes.
    pub fn bind(&self, b: &Bound) -> (NodeId, NodeId) {
        (b[self.mix], b[self.gain])
    }
}

/// Split a tensor into single-entry nodes, in row-major order.
pub(crate) fn scalar_entries<S: Scalar>(g: &mut Graph<S>, t: NodeId) -> Result<Vec<NodeId>> {
    let n = g.value(t).numel();
    let flat = g.reshape(t, &[n])?;
    (0..n).map(|i| g.slice_last(flat, i, 1)).collect()
}

/// One alternating-updates layer.
///
/// `x_old` is `[rows, K·d]`, `mix` is `[K, K]` and `gain` is `[K]`. The
/// `inner` layer is called exactly once, on block `j_star`. Returns
///
/// ```text
/// pred_i = Σ_j mix[i, j] · x_old_j
/// x_new_i = pred_i + gain_i · (inner(x_old_{j_star}) − pred_{j_star})
/// ```
///
/// evaluated as `(pred_i − gain_i · pred_{j_star}) + gain_i · inner(..)` so
/// that `K = 1` with unit parameters returns the inner output unchanged.
pub fn altup_layer_forward<S, F>(
    g: &mut Graph<S>,
    x_old: NodeId,
    mix: NodeId,
    gain: NodeId,
    j_star: usize,
    inner: F,
) -> Result<NodeId>
where
    S: Scalar,
    F: FnOnce(&mut Graph<S>, NodeId) -> Result<NodeId>,
{
    let k = g.shape(gain).first().copied().unwrap_or(0);
    let width = g.shape(x_old).last().copied().unwrap_or(0);
    if k == 0 || g.shape(gain) != [k] || g.shape(mix) != [k, k] || width % k != 0 {
        return Err(Error::ShapeMismatch {
            op: "altup_layer_forward",
            lhs: g.shape(x_old).to_vec(),
            rhs: g.shape(mix).to_vec(),
        });
    }
    if j_star >= k {
        return Err(Error::IndexOutOfRange {
            what: "altup block",
            position: 0,
            index: j_star,
            bound: k,
        });
    }
    let blocks = if k == 1 { vec![x_old] } else { g.split_last(x_old, k)? };
    let m = scalar_entries(g, mix)?;
    let gains = scalar_entries(g, gain)?;

    let mut pred = Vec::with_capacity(k);
    for i in 0..k {
        let mut acc = g.scale_by(blocks[0], m[i * k])?;
        for j in 1..k {
            let term = g.scale_by(blocks[j], m[i * k + j])?;
            acc = g.add(acc, term)?;
        }
        pred.push(acc);
    }

    let computed = inner(g, blocks[j_star])?;
    if g.shape(computed) != g.shape(blocks[j_star]) {
        return Err(Error::ShapeMismatch {
            op: "altup inner layer",
            lhs: g.shape(blocks[j_star]).to_vec(),
            rhs: g.shape(computed).to_vec(),
        });
    }

    let mut out = Vec::with_capacity(k);
    for i in 0..k {
        let anchor = g.scale_by(pred[j_star], gains[i])?;
        let base = g.sub(pred[i], anchor)?;
        let delta = g.scale_by(computed, gains[i])?;
        out.push(g.add(base, delta)?);
    }
    if k == 1 {
        Ok(out[0])
    } else {
        g.concat(&out)
    }
}

/// Sum baseline: add the extra embedding half to the token representation.
pub fn sum_consume<S: Scalar>(g: &mut Graph<S>, x: NodeId, extra: NodeId) -> Result<NodeId> {
    if g.shape(x) != g.shape(extra) {
        return Err(Error::ShapeMismatch {
            op: "sum_consume",
            lhs: g.shape(x).to_vec(),
            rhs: g.shape(extra).to_vec(),
        });
    }
    g.add(x, extra)
}

/// Embed with a `d`-wide table and repeat the lookup `k` times.
pub fn recycled_embed<S: Scalar>(g: &mut Graph<S>, table: NodeId, token_ids: &[usize], k: usize) -> Result<NodeId> {
    if k == 0 {
        return Err(Error::InvalidArgument("recycled_embed needs k >= 1".into()));
    }
    let e = embed(g, table, token_ids)?;
    replicate(g, e, k)
}

/// `[x ‖ x ‖ …]` with `k` copies along the last axis.
pub fn replicate<S: Scalar>(g: &mut Graph<S>, x: NodeId, k: usize) -> Result<NodeId> {
    if k == 1 {
        return Ok(x);
    }
    g.concat(&vec![x; k])
}

/// Sum of the `k` contiguous blocks of the last axis.
pub fn recycled_downproject<S: Scalar>(g: &mut Graph<S>, x: NodeId, k: usize) -> Result<NodeId> {
    if k == 1 {
        return Ok(x);
    }
    let blocks = g.split_last(x, k)?;
    let mut acc = blocks[0];
    for &b in &blocks[1..] {
        acc = g.add(acc, b)?;
    }
    Ok(acc)
}

/// `(per-layer extra, embedding extra)` trainable scalars relative to the
/// width-`d` baseline: `K² + K` per layer, and `(K − 1)·|V|·d` for the widened
/// embedding table unless it is recycled.
pub fn altup_param_count(model: &ModelConfig, cfg: &AltUpConfig, recycled: bool) -> (usize, usize) {
    let k = cfg.expansion;
    let per_layer = k * k + k;
    let embedding = if recycled {
        0
    } else {
        (k - 1) * model.vocab_size * model.d_model
    };
    (per_layer, embedding)
}
