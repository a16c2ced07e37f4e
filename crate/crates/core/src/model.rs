//! Decoder-only language model assembled from the layer variants.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::altup::{
    altup_layer_forward, recycled_downproject, replicate, select_block, sum_consume, AltUpConfig, AltUpLayerParams,
};
use crate::autodiff::{grad_check, GradCheckReport, Graph, NodeId};
use crate::error::{Error, Result};
use crate::memory::{memory_layer_forward, MemoryConfig, MemoryLayer, TokenContext};
use crate::params::{Bound, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::seq_altup::{
    average_pool_seq, pool_windows, seq_altup_forward, stride_and_skip_forward, SeqAltUpConfig, SeqAltUpParams,
};
use crate::tensor::Tensor;
use crate::transformer::{embed, layer_forward, lm_head, LayerParams, ModelConfig, SeqShape, LAYER_NORM_EPS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Dense,
    Altup,
    RecycledAltup,
    SumBaseline,
    SeqAltup,
    StrideSkip,
    AvgPool,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Dense,
        Variant::Altup,
        Variant::RecycledAltup,
        Variant::SumBaseline,
        Variant::SeqAltup,
        Variant::StrideSkip,
        Variant::AvgPool,
    ];

    pub fn uses_altup_config(self) -> bool {
        matches!(self, Variant::Altup | Variant::RecycledAltup | Variant::SumBaseline)
    }

    pub fn uses_seq_config(self) -> bool {
        matches!(self, Variant::SeqAltup | Variant::StrideSkip | Variant::AvgPool)
    }

    pub fn allows_memory(self) -> bool {
        matches!(self, Variant::Dense | Variant::Altup | Variant::RecycledAltup | Variant::SumBaseline)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Dense => "dense",
            Variant::Altup => "altup",
            Variant::RecycledAltup => "recycled_altup",
            Variant::SumBaseline => "sum_baseline",
            Variant::SeqAltup => "seq_altup",
            Variant::StrideSkip => "stride_skip",
            Variant::AvgPool => "avg_pool",
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Everything that determines the parameter layout of a model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    pub model: ModelConfig,
    pub variant: Variant,
    #[serde(default)]
    pub altup: Option<AltUpConfig>,
    #[serde(default)]
    pub seq: Option<SeqAltUpConfig>,
    #[serde(default)]
    pub memory: Option<MemoryConfig>,
}

impl ArchConfig {
    pub fn dense(model: ModelConfig) -> Self {
        ArchConfig {
            model,
            variant: Variant::Dense,
            altup: None,
            seq: None,
            memory: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let v = self.variant;
        match (&self.altup, v.uses_altup_config()) {
            (Some(a), true) => a.validate()?,
            (None, false) => {}
            (None, true) => return Err(Error::Config(format!("variant {v} requires an `altup` section"))),
            (Some(_), false) => return Err(Error::Config(format!("variant {v} does not take an `altup` section"))),
        }
        match (&self.seq, v.uses_seq_config()) {
            (Some(s), true) => s.validate(self.model.n_layers)?,
            (None, false) => {}
            (None, true) => return Err(Error::Config(format!("variant {v} requires a `seq` section"))),
            (Some(_), false) => return Err(Error::Config(format!("variant {v} does not take a `seq` section"))),
        }
        if let Some(m) = &self.memory {
            if !v.allows_memory() {
                return Err(Error::Config(format!("variant {v} does not support memory layers")));
            }
            m.validate(self.model.vocab_size, self.model.n_layers)?;
        }
        Ok(())
    }

    /// Blocks in the widened representation (1 outside the AltUp family).
    pub fn expansion(&self) -> usize {
        self.altup.map_or(1, |a| a.expansion)
    }

    /// Width of the token embedding table.
    pub fn embedding_width(&self) -> usize {
        match self.variant {
            Variant::Altup | Variant::SumBaseline => self.expansion() * self.model.d_model,
            _ => self.model.d_model,
        }
    }

    pub fn seq_stride(&self) -> usize {
        self.seq.as_ref().map_or(1, |s| s.stride)
    }

    pub fn seq_layer(&self, layer: usize) -> bool {
        self.variant == Variant::SeqAltup
            && self.seq.as_ref().is_some_and(|s| s.applies_to(layer, self.model.n_layers))
    }

    pub fn skip_layer(&self, layer: usize) -> bool {
        self.variant == Variant::StrideSkip
            && self.seq.as_ref().is_some_and(|s| s.applies_to(layer, self.model.n_layers))
    }

    pub fn memory_layer(&self, layer: usize) -> bool {
        self.memory.as_ref().is_some_and(|m| m.applies_to(layer))
    }
}

#[derive(Clone, Debug)]
struct Block {
    layer: LayerParams,
    altup: Option<AltUpLayerParams>,
    seq: Option<SeqAltUpParams>,
    memory: Option<MemoryLayer>,
}

/// Token ids and next-token targets for `shape.batch` sequences of
/// `shape.len` tokens, flattened sequence by sequence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub inputs: Vec<usize>,
    pub targets: Vec<usize>,
    pub shape: SeqShape,
}

impl Batch {
    pub fn new(inputs: Vec<usize>, targets: Vec<usize>, shape: SeqShape) -> Result<Self> {
        if inputs.len() != shape.rows() || targets.len() != shape.rows() || shape.rows() == 0 {
            return Err(Error::ShapeMismatch {
                op: "batch",
                lhs: vec![inputs.len(), targets.len()],
                rhs: vec![shape.batch, shape.len],
            });
        }
        Ok(Batch { inputs, targets, shape })
    }
}

/// Logits with the targets of their rows.
#[derive(Clone, Debug)]
pub struct Output {
    pub logits: NodeId,
    pub targets: Vec<usize>,
}

pub const TOKEN_EMBEDDING: &str = "embed.tokens";
pub const POSITION_EMBEDDING: &str = "embed.positions";

#[derive(Clone, Debug)]
pub struct Model<S> {
    pub arch: ArchConfig,
    pub params: ParamStore<S>,
    tokens: ParamId,
    positions: ParamId,
    blocks: Vec<Block>,
}

impl<S: Scalar> Model<S> {
    /// Build with fresh parameters drawn from `rng`.
    pub fn new<R: Rng + ?Sized>(arch: ArchConfig, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let m = &arch.model;
        let (d, v) = (m.d_model, m.vocab_size);
        let mut params = ParamStore::new();
        let std = 1.0 / (d as f64).sqrt();
        let tokens = params.add(TOKEN_EMBEDDING, Tensor::randn(&[v, arch.embedding_width()], std, rng));
        let positions = params.add(POSITION_EMBEDDING, Tensor::randn(&[m.max_seq_len, d], std, rng));
        let mut blocks = Vec::with_capacity(m.n_layers);
        for l in 0..m.n_layers {
            let prefix = format!("layer{l}");
            let (layer, altup) = match (arch.variant, arch.altup) {
                (Variant::Altup | Variant::RecycledAltup, Some(cfg)) => {
                    let p = AltUpLayerParams::init(&mut params, &prefix, d, m.ffn_hidden, &cfg, rng);
                    (p.inner, Some(p))
                }
                _ => (LayerParams::init(&mut params, &prefix, d, m.ffn_hidden, rng), None),
            };
            let seq = arch.seq_layer(l).then(|| SeqAltUpParams::init(&mut params, &prefix));
            let memory = match &arch.memory {
                Some(cfg) if cfg.applies_to(l) => Some(MemoryLayer::init(&mut params, &prefix, d, cfg, rng)?),
                _ => None,
            };
            blocks.push(Block {
                layer,
                altup,
                seq,
                memory,
            });
        }
        Ok(Model {
            arch,
            params,
            tokens,
            positions,
            blocks,
        })
    }

    /// Trainable scalars.
    pub fn census(&self) -> usize {
        self.params.census()
    }

    pub fn bind(&self, g: &mut Graph<S>) -> Bound {
        self.params.bind(g)
    }

    fn embed_tokens(&self, g: &mut Graph<S>, b: &Bound, batch: &Batch) -> Result<NodeId> {
        let d = self.arch.model.d_model;
        let k = self.arch.expansion();
        if batch.shape.len > self.arch.model.max_seq_len {
            return Err(Error::InvalidArgument(format!(
                "sequence length {} exceeds max_seq_len {}",
                batch.shape.len, self.arch.model.max_seq_len
            )));
        }
        let pos_ids: Vec<usize> = (0..batch.shape.rows()).map(|r| r % batch.shape.len).collect();
        let pos = g.gather_rows(b[self.positions], &pos_ids)?;
        let tok = embed(g, b[self.tokens], &batch.inputs)?;
        match self.arch.variant {
            Variant::Altup => {
                let pos = replicate(g, pos, k)?;
                g.add(tok, pos)
            }
            Variant::RecycledAltup => {
                let x = g.add(tok, pos)?;
                replicate(g, x, k)
            }
            Variant::SumBaseline => {
                let mut x = g.slice_last(tok, 0, d)?;
                for j in 1..k {
                    let extra = g.slice_last(tok, j * d, d)?;
                    x = sum_consume(g, x, extra)?;
                }
                g.add(x, pos)
            }
            _ => g.add(tok, pos),
        }
    }

    /// Forward pass to logits. `jitter` drives softmax-routing noise and is
    /// only used while training.
    pub fn forward(
        &self,
        g: &mut Graph<S>,
        b: &Bound,
        batch: &Batch,
        mut jitter: Option<&mut ChaCha8Rng>,
    ) -> Result<Output> {
        let arch = &self.arch;
        let heads = arch.model.n_heads;
        let mut shape = batch.shape;
        let mut x = self.embed_tokens(g, b, batch)?;
        let mut targets = batch.targets.clone();

        if arch.variant == Variant::AvgPool {
            let stride = arch.seq_stride();
            let (pooled, s) = average_pool_seq(g, x, stride, shape)?;
            targets = pool_windows(shape, stride)?.iter().map(|&(_, end)| batch.targets[end - 1]).collect();
            x = pooled;
            shape = s;
        }

        let ctx = TokenContext {
            token_ids: &batch.inputs,
            seq_len: batch.shape.len,
            vocab_size: arch.model.vocab_size,
        };
        for (l, block) in self.blocks.iter().enumerate() {
            let nodes = block.layer.bind(b);
            let mem = block.memory.as_ref().map(|m| m.bind(b));
            let jit = jitter.as_deref_mut();
            let full = |g: &mut Graph<S>, z: NodeId| -> Result<NodeId> {
                let y = layer_forward(g, z, &nodes, heads, shape, true)?;
                match &mem {
                    Some(m) => memory_layer_forward(g, z, y, m, ctx, jit),
                    None => Ok(y),
                }
            };
            x = if let Some(p) = &block.altup {
                let (mix, gain) = p.bind(b);
                let cfg = arch.altup.as_ref().expect("validated");
                altup_layer_forward(g, x, mix, gain, select_block(l, cfg), full)?
            } else if let Some(p) = &block.seq {
                let p = p.bind(b);
                seq_altup_forward(g, x, &p, arch.seq_stride(), shape, |g, z, s| {
                    layer_forward(g, z, &nodes, heads, s, true)
                })?
            } else if arch.skip_layer(l) {
                stride_and_skip_forward(g, x, arch.seq_stride(), shape, |g, z, s| {
                    layer_forward(g, z, &nodes, heads, s, true)
                })?
            } else {
                full(g, x)?
            };
        }

        let table = b[self.tokens];
        let logits = match arch.variant {
            Variant::Altup => {
                let h = g.layer_norm(x, None, S::of(LAYER_NORM_EPS))?;
                lm_head(g, h, table)?
            }
            Variant::RecycledAltup => {
                let down = recycled_downproject(g, x, arch.expansion())?;
                let h = g.layer_norm(down, None, S::of(LAYER_NORM_EPS))?;
                lm_head(g, h, table)?
            }
            Variant::SumBaseline => {
                let h = g.layer_norm(x, None, S::of(LAYER_NORM_EPS))?;
                let head = g.slice_last(table, 0, arch.model.d_model)?;
                lm_head(g, h, head)?
            }
            _ => {
                let h = g.layer_norm(x, None, S::of(LAYER_NORM_EPS))?;
                lm_head(g, h, table)?
            }
        };
        Ok(Output { logits, targets })
    }

    /// Mean next-token cross-entropy and the logits it was computed from.
    pub fn loss(
        &self,
        g: &mut Graph<S>,
        b: &Bound,
        batch: &Batch,
        jitter: Option<&mut ChaCha8Rng>,
    ) -> Result<(NodeId, Output)> {
        let out = self.forward(g, b, batch, jitter)?;
        let loss = g.cross_entropy(out.logits, &out.targets)?;
        Ok((loss, out))
    }
}

impl Model<f64> {
    /// Gradient check of the batch loss over every parameter.
    pub fn grad_check(&self, batch: &Batch, eps: f64) -> Result<GradCheckReport> {
        let named: Vec<(String, Tensor<f64>)> = self.params.iter().map(|(n, t)| (n.to_string(), t.clone())).collect();
        grad_check(
            |g, ids| {
                let b = Bound::from_nodes(ids.to_vec());
                Ok(self.loss(g, &b, batch, None)?.0)
            },
            &named,
            eps,
        )
    }
}
