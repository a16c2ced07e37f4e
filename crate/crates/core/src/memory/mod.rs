//! Memory-augmented layers: a table of small partial experts added to a
//! layer's output, with the experts picked by a lookup function.
//!
//! Four lookups are provided. Softmax routing is learned and weights each
//! chosen expert by its routing probability. Token-ID, hyperplane LSH and
//! min-hash are fixed hashes with unit weights.

use rand::distr::{Distribution, Uniform};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Standard deviation of the router initialisation.
pub const ROUTER_INIT_STD: f64 = 2e-2;
/// Default multiplicative jitter half-width for softmax routing.
pub const DEFAULT_JITTER: f64 = 0.01;

/// One expert: `V·relu(Uᵀx)` with `U, V: [d, rank]`, or a constant vector.
#[derive(Clone, Debug, PartialEq)]
pub enum PartialExpert<S> {
    Matrix { u: Tensor<S>, v: Tensor<S> },
    Constant(Tensor<S>),
}

impl<S: Scalar> PartialExpert<S> {
    pub fn width(&self) -> usize {
        match self {
            PartialExpert::Matrix { u, .. } => u.shape()[0],
            PartialExpert::Constant(b) => b.numel(),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            PartialExpert::Matrix { u, v } => u.numel() + v.numel(),
            PartialExpert::Constant(b) => b.numel(),
        }
    }
}

/// Evaluate one expert on a single `d`-vector.
pub fn expert_forward<S: Scalar>(x: &[S], e: &PartialExpert<S>) -> Result<Vec<S>> {
    let d = e.width();
    if x.len() != d {
        return Err(Error::ShapeMismatch {
            op: "expert_forward",
            lhs: vec![x.len()],
            rhs: vec![d],
        });
    }
    match e {
        PartialExpert::Constant(b) => Ok(b.data().to_vec()),
        PartialExpert::Matrix { u, v } => {
            let rank = u.shape()[1];
            if v.shape() != [d, rank] {
                return Err(Error::ShapeMismatch {
                    op: "expert_forward",
                    lhs: u.shape().to_vec(),
                    rhs: v.shape().to_vec(),
                });
            }
            let mut h = vec![S::zero(); rank];
            for (i, &xi) in x.iter().enumerate() {
                for (j, hj) in h.iter_mut().enumerate() {
                    *hj += u.data()[i * rank + j] * xi;
                }
            }
            h.iter_mut().for_each(|v| *v = v.max(S::zero()));
            Ok((0..d)
                .map(|i| (0..rank).map(|j| v.data()[i * rank + j] * h[j]).sum())
                .collect())
        }
    }
}

/// `n` experts sharing width and rank.
#[derive(Clone, Debug, PartialEq)]
pub struct MemoryTable<S> {
    pub experts: Vec<PartialExpert<S>>,
}

impl<S: Scalar> MemoryTable<S> {
    pub fn len(&self) -> usize {
        self.experts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.experts.is_empty()
    }

    pub fn param_count(&self) -> usize {
        self.experts.iter().map(PartialExpert::param_count).sum()
    }
}

/// Trainable scalars of a table of `n` experts of width `d`: `2·rank·n·d`
/// for matrix experts, `n·d` for constant ones (`rank == 0`).
pub fn table_param_count(n: usize, d: usize, rank: usize) -> usize {
    if rank == 0 {
        n * d
    } else {
        2 * rank * n * d
    }
}

// ---- routing ---------------------------------------------------------------

/// Softmax router `h(x) = W·x` with `W: [n, d]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RouterParams<S> {
    pub weight: Tensor<S>,
    pub top_k: usize,
    pub jitter_eps: f64,
}

impl<S: Scalar> RouterParams<S> {
    pub fn new(weight: Tensor<S>, top_k: usize, jitter_eps: f64) -> Result<Self> {
        let n = weight.shape().first().copied().unwrap_or(0);
        if weight.rank() != 2 || top_k == 0 || top_k > n || !(jitter_eps >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "router needs a [n, d] weight, 1 <= top_k <= n and jitter >= 0 (got {:?}, {top_k}, {jitter_eps})",
                weight.shape()
            )));
        }
        Ok(RouterParams { weight, top_k, jitter_eps })
    }

    pub fn table_size(&self) -> usize {
        self.weight.shape()[0]
    }
}

/// Chosen experts with their routing probabilities, best first.
#[derive(Clone, Debug, PartialEq)]
pub struct Route<S> {
    pub indices: Vec<usize>,
    pub probs: Vec<S>,
}

/// Row-wise softmax of `W·x` over all `n` experts.
pub fn router_probs<S: Scalar>(x: &[S], weight: &Tensor<S>) -> Vec<S> {
    let d = weight.last_dim();
    let logits: Vec<S> = (0..weight.rows())
        .map(|i| weight.row(i).iter().zip(x).map(|(&w, &v)| w * v).sum())
        .collect();
    let max = logits.iter().copied().fold(S::neg_infinity(), S::max);
    let exps: Vec<S> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: S = exps.iter().copied().sum();
    debug_assert_eq!(x.len(), d);
    exps.into_iter().map(|e| e / total).collect()
}

/// Indices of the `k` largest values; equal values keep the lower index first.
pub fn top_k<S: Scalar>(values: &[S], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
    order.truncate(k);
    order
}

/// Multiplicative jitter factors drawn from `U[1 − eps, 1 + eps]`.
pub fn jitter_factors<S: Scalar, R: Rng + ?Sized>(len: usize, eps: f64, rng: &mut R) -> Vec<S> {
    if eps == 0.0 {
        return vec![S::one(); len];
    }
    let u = Uniform::new_inclusive(1.0 - eps, 1.0 + eps).expect("eps is finite and non-negative");
    (0..len).map(|_| S::of(u.sample(rng))).collect()
}

/// Top-k softmax routing of one `d`-vector. With `training`, `x` is first
/// scaled elementwise by jitter factors drawn from `rng`.
pub fn softmax_route<S: Scalar, R: Rng + ?Sized>(
    x: &[S],
    r: &RouterParams<S>,
    training: bool,
    rng: &mut R,
) -> Result<Route<S>> {
    if x.len() != r.weight.last_dim() {
        return Err(Error::ShapeMismatch {
            op: "softmax_route",
            lhs: vec![x.len()],
            rhs: r.weight.shape().to_vec(),
        });
    }
    let probs = if training && r.jitter_eps > 0.0 {
        let j: Vec<S> = jitter_factors(x.len(), r.jitter_eps, rng);
        let xj: Vec<S> = x.iter().zip(&j).map(|(&a, &b)| a * b).collect();
        router_probs(&xj, &r.weight)
    } else {
        router_probs(x, &r.weight)
    };
    let indices = top_k(&probs, r.top_k);
    let probs = indices.iter().map(|&i| probs[i]).collect();
    Ok(Route { indices, probs })
}

/// Token-ID lookup: the expert of a token is the token itself. Requires a
/// table with one expert per vocabulary entry.
pub fn token_id_lookup(token_id: usize, vocab_size: usize, table_size: usize) -> Result<usize> {
    if table_size != vocab_size {
        return Err(Error::InvalidArgument(format!(
            "token-id lookup needs table size {table_size} == vocabulary size {vocab_size}"
        )));
    }
    if token_id >= vocab_size {
        return Err(Error::IndexOutOfRange {
            what: "token id",
            position: 0,
            index: token_id,
            bound: vocab_size,
        });
    }
    Ok(token_id)
}

/// SplitMix64 finaliser, used wherever integers are hashed.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hash of an integer cell vector.
pub fn hash_cells(cells: &[i64]) -> u64 {
    cells
        .iter()
        .fold(0x6a09_e667_f3bc_c909, |h, &c| mix64(h ^ c as u64))
}

/// Default number of projections for a table of `n` buckets: `⌈log₂ n⌉`, at least 1.
pub fn default_projections(n: usize) -> usize {
    (usize::BITS - n.saturating_sub(1).leading_zeros()).max(1) as usize
}

/// Grid hashing with random equispaced hyperplanes:
/// `cell_j = ⌊(direction_j·x + offset_j) / width⌋`, bucket = hash(cells) mod n.
#[derive(Clone, Debug, PartialEq)]
pub struct HyperplaneLsh {
    /// `[m, d]` standard-normal projection directions.
    pub directions: Tensor<f64>,
    /// `m` offsets in `[0, width)`.
    pub offsets: Vec<f64>,
    pub width: f64,
    pub table_size: usize,
}

impl HyperplaneLsh {
    pub fn new<R: Rng + ?Sized>(d: usize, table_size: usize, projections: usize, width: f64, rng: &mut R) -> Result<Self> {
        if projections == 0 || d == 0 {
            return Err(Error::InvalidArgument("hyperplane LSH needs m >= 1 and d >= 1".into()));
        }
        let directions = Tensor::randn(&[projections, d], 1.0, rng);
        let offsets = (0..projections).map(|_| rng.random::<f64>() * width).collect();
        Self::from_parts(directions, offsets, width, table_size)
    }

    pub fn from_parts(directions: Tensor<f64>, offsets: Vec<f64>, width: f64, table_size: usize) -> Result<Self> {
        if !(width > 0.0) || table_size == 0 || directions.rank() != 2 || offsets.len() != directions.rows() {
            return Err(Error::InvalidArgument(format!(
                "invalid hyperplane LSH: width {width}, n {table_size}, directions {:?}, {} offsets",
                directions.shape(),
                offsets.len()
            )));
        }
        Ok(HyperplaneLsh {
            directions,
            offsets,
            width,
            table_size,
        })
    }

    pub fn cells<S: Scalar>(&self, x: &[S]) -> Vec<i64> {
        (0..self.directions.rows())
            .map(|j| {
                let dot: f64 = self.directions.row(j).iter().zip(x).map(|(&a, &b)| a * b.as_f64()).sum();
                ((dot + self.offsets[j]) / self.width).floor() as i64
            })
            .collect()
    }

    pub fn lookup<S: Scalar>(&self, x: &[S]) -> usize {
        (hash_cells(&self.cells(x)) % self.table_size as u64) as usize
    }
}

/// Min-hash over token-id sets under a seeded pseudo-random priority.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MinHash {
    pub seed: u64,
}

impl MinHash {
    pub fn priority(&self, token: usize) -> u64 {
        mix64(self.seed ^ mix64(token as u64))
    }

    /// The member of minimal priority (the lower id on a priority tie).
    pub fn lookup(&self, tokens: &[usize]) -> Result<usize> {
        tokens
            .iter()
            .copied()
            .min_by_key(|&t| (self.priority(t), t))
            .ok_or_else(|| Error::InvalidArgument("min-hash of an empty set".into()))
    }
}

// ---- configuration and graph construction ------------------------------------

/// How a memory layer picks its experts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LookupConfig {
    Softmax {
        #[serde(default = "default_top_k")]
        top_k: usize,
        #[serde(default = "default_jitter")]
        jitter_eps: f64,
    },
    TokenId,
    HyperplaneLsh {
        #[serde(default)]
        projections: Option<usize>,
        #[serde(default = "default_width")]
        width: f64,
    },
    MinHash,
}

fn default_top_k() -> usize {
    1
}

fn default_jitter() -> f64 {
    DEFAULT_JITTER
}

fn default_width() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemoryConfig {
    pub table_size: usize,
    /// Expert rank; 0 selects constant experts.
    pub rank: usize,
    pub lookup: LookupConfig,
    /// Zero-based layers that carry a table. Defaults to every layer.
    #[serde(default)]
    pub layers: Option<Vec<usize>>,
}

impl MemoryConfig {
    pub fn validate(&self, vocab_size: usize, n_layers: usize) -> Result<()> {
        if self.table_size == 0 {
            return Err(Error::Config("memory.table_size must be positive".into()));
        }
        if let Some(bad) = self.layers.iter().flatten().find(|&&l| l >= n_layers) {
            return Err(Error::Config(format!("memory.layers entry {bad} >= n_layers {n_layers}")));
        }
        match self.lookup {
            LookupConfig::Softmax { top_k, jitter_eps } => {
                if top_k == 0 || top_k > self.table_size {
                    return Err(Error::Config(format!(
                        "memory.lookup.top_k must be in 1..={}",
                        self.table_size
                    )));
                }
                if !(jitter_eps >= 0.0 && jitter_eps < 1.0) {
                    return Err(Error::Config("memory.lookup.jitter_eps must be in [0, 1)".into()));
                }
            }
            LookupConfig::TokenId | LookupConfig::MinHash => {
                if self.table_size != vocab_size {
                    return Err(Error::Config(format!(
                        "memory.table_size must equal the vocabulary size ({vocab_size}) for this lookup"
                    )));
                }
            }
            LookupConfig::HyperplaneLsh { projections, width } => {
                if projections == Some(0) || !(width > 0.0 && width.is_finite()) {
                    return Err(Error::Config("memory.lookup needs projections >= 1 and width > 0".into()));
                }
            }
        }
        Ok(())
    }

    pub fn applies_to(&self, layer: usize) -> bool {
        self.layers.as_ref().is_none_or(|l| l.contains(&layer))
    }

    /// Trainable scalars added per table, router included.
    pub fn params_per_table(&self, d: usize) -> (usize, usize) {
        let router = match self.lookup {
            LookupConfig::Softmax { .. } => self.table_size * d,
            _ => 0,
        };
        (table_param_count(self.table_size, d, self.rank), router)
    }
}

/// Fixed (non-trainable) hashing state of a memory layer.
#[derive(Clone, Debug, PartialEq)]
pub enum LookupState {
    Softmax { router: ParamId, top_k: usize, jitter_eps: f64 },
    TokenId,
    Hyperplane(HyperplaneLsh),
    MinHash(MinHash),
}

/// Table tensors of one layer. Row `i` of `keys` is `U_i` (`[d, rank]`
/// row-major); row `i` of `values` is `V_iᵀ` (`[rank, d]`), or the constant
/// vector when `rank == 0`.
#[derive(Clone, Debug)]
pub struct MemoryLayer {
    pub keys: Option<ParamId>,
    pub values: ParamId,
    pub rank: usize,
    pub table_size: usize,
    pub lookup: LookupState,
}

impl MemoryLayer {
    /// Register a table and its lookup under `prefix`. Hash randomness is
    /// drawn from `rng`, so it is fixed by the run seed.
    pub fn init<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        prefix: &str,
        d: usize,
        cfg: &MemoryConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let n = cfg.table_size;
        let (keys, values) = if cfg.rank == 0 {
            (None, store.add(format!("{prefix}.memory_values"), Tensor::zeros(&[n, d])))
        } else {
            let k = store.add(
                format!("{prefix}.memory_keys"),
                Tensor::randn(&[n, d * cfg.rank], 1.0 / (d as f64).sqrt(), rng),
            );
            let v = store.add(
                format!("{prefix}.memory_values"),
                Tensor::randn(&[n, cfg.rank * d], 1.0 / (cfg.rank as f64).sqrt(), rng),
            );
            (Some(k), v)
        };
        let lookup = match cfg.lookup {
            LookupConfig::Softmax { top_k, jitter_eps } => LookupState::Softmax {
                router: store.add(format!("{prefix}.memory_router"), Tensor::randn(&[n, d], ROUTER_INIT_STD, rng)),
                top_k,
                jitter_eps,
            },
            LookupConfig::TokenId => LookupState::TokenId,
            LookupConfig::HyperplaneLsh { projections, width } => {
                let m = projections.unwrap_or_else(|| default_projections(n));
                LookupState::Hyperplane(HyperplaneLsh::new(d, n, m, width, rng)?)
            }
            LookupConfig::MinHash => LookupState::MinHash(MinHash { seed: rng.random() }),
        };
        Ok(MemoryLayer {
            keys,
            values,
            rank: cfg.rank,
            table_size: n,
            lookup,
        })
    }

    pub fn bind(&self, b: &Bound) -> MemoryNodes<'_> {
        MemoryNodes {
            keys: self.keys.map(|k| b[k]),
            values: b[self.values],
            rank: self.rank,
            table_size: self.table_size,
            lookup: match &self.lookup {
                LookupState::Softmax { router, top_k, jitter_eps } => LookupNode::Softmax {
                    router: b[*router],
                    top_k: *top_k,
                    jitter_eps: *jitter_eps,
                },
                LookupState::TokenId => LookupNode::TokenId,
                LookupState::Hyperplane(h) => LookupNode::Hyperplane(h),
                LookupState::MinHash(m) => LookupNode::MinHash(*m),
            },
        }
    }

    /// Extract the experts as standalone values (for inspection and tests).
    pub fn table<S: Scalar>(&self, store: &ParamStore<S>) -> MemoryTable<S> {
        let values = store.get(self.values);
        let d = if self.rank == 0 {
            values.last_dim()
        } else {
            values.last_dim() / self.rank
        };
        let experts = (0..self.table_size)
            .map(|i| match self.keys {
                None => PartialExpert::Constant(Tensor::new(vec![d], values.row(i).to_vec()).expect("row width")),
                Some(k) => {
                    let u = Tensor::new(vec![d, self.rank], store.get(k).row(i).to_vec()).expect("row width");
                    let vt = values.row(i);
                    let v: Vec<S> = (0..d * self.rank)
                        .map(|idx| vt[(idx % self.rank) * d + idx / self.rank])
                        .collect();
                    PartialExpert::Matrix {
                        u,
                        v: Tensor::new(vec![d, self.rank], v).expect("row width"),
                    }
                }
            })
            .collect();
        MemoryTable { experts }
    }
}

/// Lookup resolved against a graph.
#[derive(Clone, Copy, Debug)]
pub enum LookupNode<'a> {
    Softmax { router: NodeId, top_k: usize, jitter_eps: f64 },
    TokenId,
    Hyperplane(&'a HyperplaneLsh),
    MinHash(MinHash),
}

/// [`MemoryLayer`] bound to a graph.
#[derive(Clone, Copy, Debug)]
pub struct MemoryNodes<'a> {
    pub keys: Option<NodeId>,
    pub values: NodeId,
    pub rank: usize,
    pub table_size: usize,
    pub lookup: LookupNode<'a>,
}

/// Selected experts for every row: `slots[s][r]` is the `s`-th choice for
/// row `r`. `probs`, when present, is the `[rows, n]` routing distribution
/// used to weight each choice; otherwise every choice has weight 1.
#[derive(Clone, Debug)]
pub struct Routing {
    pub slots: Vec<Vec<usize>>,
    pub probs: Option<NodeId>,
}

/// Per-row context for the fixed lookups.
#[derive(Clone, Copy, Debug)]
pub struct TokenContext<'a> {
    /// Token id of every row.
    pub token_ids: &'a [usize],
    /// Length of each sequence; rows are grouped sequence by sequence.
    pub seq_len: usize,
    pub vocab_size: usize,
}

/// Choose experts for every row of `x: [rows, d]`.
///
/// Hyperplane LSH hashes the unit-normalised row. Min-hash hashes the set of
/// token ids at positions up to and including the row within its sequence.
/// `jitter` supplies randomness for softmax routing during training.
pub fn route<S: Scalar>(
    g: &mut Graph<S>,
    x: NodeId,
    mem: &MemoryNodes<'_>,
    ctx: TokenContext<'_>,
    jitter: Option<&mut ChaCha8Rng>,
) -> Result<Routing> {
    let rows = g.shape(x)[0];
    if ctx.token_ids.len() != rows || ctx.seq_len == 0 || rows % ctx.seq_len != 0 {
        return Err(Error::ShapeMismatch {
            op: "memory route",
            lhs: g.shape(x).to_vec(),
            rhs: vec![ctx.token_ids.len(), ctx.seq_len],
        });
    }
    match mem.lookup {
        LookupNode::Softmax { router, top_k, jitter_eps } => {
            let input = match jitter {
                Some(rng) if jitter_eps > 0.0 => {
                    let factors = jitter_factors(g.value(x).numel(), jitter_eps, rng);
                    let j = g.constant(Tensor::new(g.shape(x).to_vec(), factors)?);
                    g.mul(x, j)?
                }
                _ => x,
            };
            let wt = g.transpose(router)?;
            let logits = g.matmul(input, wt)?;
            let probs = g.softmax(logits, false)?;
            let p = g.value(probs);
            let picks: Vec<Vec<usize>> = (0..rows).map(|r| self::top_k(p.row(r), top_k)).collect();
            let slots = (0..top_k).map(|s| picks.iter().map(|row| row[s]).collect()).collect();
            Ok(Routing {
                slots,
                probs: Some(probs),
            })
        }
        LookupNode::TokenId => {
            let slot = ctx
                .token_ids
                .iter()
                .map(|&t| token_id_lookup(t, ctx.vocab_size, mem.table_size))
                .collect::<Result<Vec<_>>>()?;
            Ok(Routing {
                slots: vec![slot],
                probs: None,
            })
        }
        LookupNode::Hyperplane(lsh) => {
            let v = g.value(x);
            let slot = (0..rows)
                .map(|r| {
                    let row = v.row(r);
                    let norm = row.iter().map(|&a| a * a).sum::<S>().sqrt();
                    let unit: Vec<S> = if norm > S::zero() {
                        row.iter().map(|&a| a / norm).collect()
                    } else {
                        row.to_vec()
                    };
                    lsh.lookup(&unit)
                })
                .collect();
            Ok(Routing {
                slots: vec![slot],
                probs: None,
            })
        }
        LookupNode::MinHash(mh) => {
            if let Some((position, &t)) = ctx.token_ids.iter().enumerate().find(|(_, &t)| t >= mem.table_size) {
                return Err(Error::IndexOutOfRange {
                    what: "min-hash token",
                    position,
                    index: t,
                    bound: mem.table_size,
                });
            }
            let mut slot = Vec::with_capacity(rows);
            for seq in ctx.token_ids.chunks(ctx.seq_len) {
                let mut best: Option<usize> = None;
                for &t in seq {
                    best = Some(match best {
                        Some(b) => mh.lookup(&[b, t])?,
                        None => t,
                    });
                    slot.push(best.expect("just set"));
                }
            }
            Ok(Routing {
                slots: vec![slot],
                probs: None,
            })
        }
    }
}

/// `inner_out + Σ_s w_s · expert_{slots[s]}(x)` for every row.
///
/// Weights are the routing probabilities of the chosen experts when
/// `routing.probs` is set (gradients reach the router through them), and 1
/// otherwise. The choice of experts itself is not differentiated.
pub fn memory_augmented_forward<S: Scalar>(
    g: &mut Graph<S>,
    x: NodeId,
    inner_out: NodeId,
    mem: &MemoryNodes<'_>,
    routing: &Routing,
) -> Result<NodeId> {
    if g.shape(x) != g.shape(inner_out) || g.shape(x).len() != 2 {
        return Err(Error::ShapeMismatch {
            op: "memory_augmented_forward",
            lhs: g.shape(x).to_vec(),
            rhs: g.shape(inner_out).to_vec(),
        });
    }
    let (rows, d) = (g.shape(x)[0], g.shape(x)[1]);
    let mut out = inner_out;
    for slot in &routing.slots {
        if slot.len() != rows {
            return Err(Error::ShapeMismatch {
                op: "memory_augmented_forward",
                lhs: vec![rows],
                rhs: vec![slot.len()],
            });
        }
        if let Some((position, &index)) = slot.iter().enumerate().find(|(_, &i)| i >= mem.table_size) {
            return Err(Error::IndexOutOfRange {
                what: "expert index",
                position,
                index,
                bound: mem.table_size,
            });
        }
        let values = g.gather_rows(mem.values, slot)?;
        let expert = match mem.keys {
            None => values,
            Some(keys) => {
                let u = g.gather_rows(keys, slot)?;
                let h = g.rowwise_matmul(x, u, mem.rank)?;
                let h = g.relu(h)?;
                g.rowwise_matmul(h, values, d)?
            }
        };
        let weighted = match routing.probs {
            Some(p) => {
                let w = g.pick_per_row(p, slot)?;
                g.scale_rows(expert, w)?
            }
            None => expert,
        };
        out = g.add(out, weighted)?;
    }
    Ok(out)
}

/// Convenience: route and apply in one step.
pub fn memory_layer_forward<S: Scalar>(
    g: &mut Graph<S>,
    x: NodeId,
    inner_out: NodeId,
    mem: &MemoryNodes<'_>,
    ctx: TokenContext<'_>,
    jitter: Option<&mut ChaCha8Rng>,
) -> Result<NodeId> {
    let routing = route(g, x, mem, ctx, jitter)?;
    memory_augmented_forward(g, x, inner_out, mem, &routing)
}
