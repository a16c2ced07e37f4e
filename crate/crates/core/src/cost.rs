//! Closed-form parameter, compute and activation-memory accounting.
//!
//! Compute is counted as multiply-accumulates of matrix products only;
//! softmax, layer norm, activations and elementwise ops are excluded. That is
//! exactly what [`Graph::macs`](crate::autodiff::Graph::macs) records, so every
//! closed form here can be checked against an instrumented forward pass.

use serde::{Deserialize, Serialize};

use crate::memory::{LookupConfig, MemoryConfig};
use crate::model::{ArchConfig, Variant};
use crate::seq_altup::SeqAltUpParams;
use crate::transformer::{LayerParams, SeqShape};

/// `(attention, ffn)` multiply-accumulates of one layer over a sequence of
/// `n` positions: `4·n·d² + 2·n²·d` (four projections, scores and weighted
/// values) and `3·n·d·ffn` (gate, up and down). The head count does not
/// change either term.
pub fn layer_flops(n: usize, d_model: usize, ffn_hidden: usize, n_heads: usize) -> (u64, u64) {
    debug_assert!(n_heads >= 1 && d_model % n_heads == 0);
    let (n, d, h) = (n as u64, d_model as u64, ffn_hidden as u64);
    (4 * n * d * d + 2 * n * n * d, 3 * n * d * h)
}

/// Per-token cost of the predict and correct steps around one layer:
/// `K·(2K − 1)·d` for the `K` mixtures of `K` blocks and `2·K·d` for the
/// corrections.
pub fn altup_overhead(d: usize, k: usize) -> u64 {
    let (d, k) = (d as u64, k as u64);
    k * (2 * k - 1) * d + 2 * k * d
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryVariant {
    Dense,
    AltupK2,
}

/// Activation memory in abstract units: `s·b·h·L·(34 + 5·a·s/h)`, plus
/// `3·s·b·h·L` for AltUp with two blocks. The result is rounded down when
/// `5·a·s` is not a multiple of `h`.
pub fn activation_memory(s: usize, b: usize, h: usize, layers: usize, a: usize, variant: MemoryVariant) -> u64 {
    let (s, b, h, l, a) = (s as u64, b as u64, h as u64, layers as u64, a as u64);
    let base = s * b * l * (34 * h + 5 * a * s);
    match variant {
        MemoryVariant::Dense => base,
        MemoryVariant::AltupK2 => base + 3 * s * b * h * l,
    }
}

/// Parameter and cost summary for one architecture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub variant: Variant,
    /// Token embedding table, shared with the output head.
    pub embedding_params: u64,
    /// Token tables if the output projection were a separate table.
    pub embedding_params_untied: u64,
    /// Everything else: positions, layers, AltUp and sequence scalars, memory.
    pub non_embedding_params: u64,
    pub total_params: u64,
    pub altup_params: u64,
    pub seq_altup_params: u64,
    pub memory_table_params: u64,
    pub router_params: u64,
    /// Full-length layer at `max_seq_len`, per position.
    pub flops_per_token_per_layer: u64,
    pub attention_flops_per_token_per_layer: u64,
    pub ffn_flops_per_token_per_layer: u64,
    /// Predict and correct cost per token for one AltUp layer, 0 otherwise.
    pub altup_overhead_flops_per_token: u64,
    /// Matrix-product MACs of one forward pass over a single full-length
    /// sequence, head and memory included.
    pub forward_macs_per_sequence: u64,
    /// `None` where the closed form is only stated for other variants.
    pub activation_memory_units: Option<u64>,
    pub activation_memory_bytes: Option<u64>,
    pub assumptions: Vec<String>,
}

/// Options that do not affect the parameter layout.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostOptions {
    pub batch_size: usize,
    pub bytes_per_element: usize,
}

impl Default for CostOptions {
    fn default() -> Self {
        CostOptions {
            batch_size: 1,
            bytes_per_element: 8,
        }
    }
}

fn memory_params(cfg: &MemoryConfig, d: usize, n_layers: usize) -> (u64, u64) {
    let tables = (0..n_layers).filter(|&l| cfg.applies_to(l)).count() as u64;
    let (table, router) = cfg.params_per_table(d);
    (tables * table as u64, tables * router as u64)
}

/// Multiply-accumulates of one forward pass of `arch` over `shape`.
pub fn forward_macs(arch: &ArchConfig, shape: SeqShape) -> u64 {
    let m = &arch.model;
    let (d, ffn) = (m.d_model, m.ffn_hidden);
    let stride = arch.seq_stride();
    let sub_len = shape.len.div_ceil(stride);
    let batch = shape.batch as u64;
    let layer = |len: usize| {
        let (a, f) = layer_flops(len, d, ffn, m.n_heads);
        batch * (a + f)
    };
    let mut total = 0;
    for l in 0..m.n_layers {
        let len = if arch.variant == Variant::AvgPool || arch.seq_layer(l) || arch.skip_layer(l) {
            sub_len
        } else {
            shape.len
        };
        total += layer(len);
        if let Some(cfg) = arch.memory.as_ref().filter(|c| c.applies_to(l)) {
            let rows = shape.rows() as u64;
            let (router, slots) = match cfg.lookup {
                LookupConfig::Softmax { top_k, .. } => ((d * cfg.table_size) as u64, top_k as u64),
                _ => (0, 1),
            };
            total += rows * (router + slots * 2 * (d * cfg.rank) as u64);
        }
    }
    let out_rows = if arch.variant == Variant::AvgPool {
        shape.batch * sub_len
    } else {
        shape.rows()
    };
    let head_width = if arch.variant == Variant::Altup {
        arch.expansion() * d
    } else {
        d
    };
    total + (out_rows * head_width * m.vocab_size) as u64
}

/// Closed-form counts for `arch`. Parameter counts equal the census of a
/// model built from the same configuration.
pub fn count_params(arch: &ArchConfig, opts: CostOptions) -> CostReport {
    let m = &arch.model;
    let (d, v, l) = (m.d_model, m.vocab_size as u64, m.n_layers);
    let k = arch.expansion();
    let mut assumptions = vec![
        "FLOPs are multiply-accumulates of matrix products; softmax, layer norm, GELU and elementwise ops are excluded"
            .to_string(),
        "attention per layer: 4·N·d² (Q, K, V, O) + 2·N²·d (scores, weighted values); FFN: 3·N·d·ffn (gated GELU)"
            .to_string(),
        "output head is tied to the token embedding table; the untied view adds a separate output table".to_string(),
        "final layer norm has no trainable scale".to_string(),
        "learned absolute position embeddings [max_seq_len, d] are counted as non-embedding".to_string(),
    ];

    let table_width = arch.embedding_width() as u64;
    let embedding = v * table_width;
    let head_width = match arch.variant {
        Variant::Altup => table_width,
        _ => d as u64,
    };
    let untied = embedding + v * head_width;

    let per_layer = LayerParams::count(d, m.ffn_hidden) as u64;
    let altup = if matches!(arch.variant, Variant::Altup | Variant::RecycledAltup) {
        (l * (k * k + k)) as u64
    } else {
        0
    };
    let seq = (0..l).filter(|&i| arch.seq_layer(i)).count() as u64 * SeqAltUpParams::COUNT as u64;
    let (memory, router) = arch.memory.as_ref().map_or((0, 0), |c| memory_params(c, d, l));
    let positions = (m.max_seq_len * d) as u64;
    let non_embedding = positions + l as u64 * per_layer + altup + seq + memory + router;

    let (attn, ffn) = layer_flops(m.max_seq_len, d, m.ffn_hidden, m.n_heads);
    let n = m.max_seq_len as u64;
    let overhead = match arch.variant {
        Variant::Altup | Variant::RecycledAltup => altup_overhead(d, k),
        _ => 0,
    };
    if overhead > 0 {
        assumptions.push(format!(
            "AltUp overhead is per token per layer: K(2K-1)d predict + 2Kd correct with K = {k}"
        ));
    }

    let memory_variant = match arch.variant {
        Variant::Altup | Variant::RecycledAltup if k == 2 => Some(MemoryVariant::AltupK2),
        Variant::Altup | Variant::RecycledAltup => None,
        _ => Some(MemoryVariant::Dense),
    };
    let activation = memory_variant.map(|mv| activation_memory(m.max_seq_len, opts.batch_size, d, l, m.n_heads, mv));
    match memory_variant {
        None => assumptions.push(format!("activation memory closed form is not stated for K = {k}; omitted")),
        Some(_) => assumptions.push(format!(
            "activation memory s·b·h·L·(34 + 5as/h) at s = max_seq_len, b = {}, h = d_model; bytes use {} per element",
            opts.batch_size, opts.bytes_per_element
        )),
    }
    if arch.variant.uses_seq_config() {
        assumptions.push(format!(
            "subsampled layers process ceil(N/{}) positions; per-layer FLOPs above are for full-length layers",
            arch.seq_stride()
        ));
    }
    if arch.memory.as_ref().is_some_and(|c| c.rank == 0) {
        assumptions.push("constant experts hold one d-vector each (n·d per table)".to_string());
    }

    CostReport {
        variant: arch.variant,
        embedding_params: embedding,
        embedding_params_untied: untied,
        non_embedding_params: non_embedding,
        total_params: embedding + non_embedding,
        altup_params: altup,
        seq_altup_params: seq,
        memory_table_params: memory,
        router_params: router,
        flops_per_token_per_layer: (attn + ffn) / n,
        attention_flops_per_token_per_layer: attn / n,
        ffn_flops_per_token_per_layer: ffn / n,
        altup_overhead_flops_per_token: overhead,
        forward_macs_per_sequence: forward_macs(arch, SeqShape { batch: 1, len: m.max_seq_len }),
        activation_memory_units: activation,
        activation_memory_bytes: activation.map(|a| a * opts.bytes_per_element as u64),
        assumptions,
    }
}

impl CostReport {
    /// Plain-text two-column table.
    pub fn to_table(&self) -> String {
        let opt = |v: Option<u64>| v.map_or_else(|| "n/a".to_string(), |v| v.to_string());
        let rows: Vec<(&str, String)> = vec![
            ("variant", self.variant.to_string()),
            ("embedding_params", self.embedding_params.to_string()),
            ("embedding_params_untied", self.embedding_params_untied.to_string()),
            ("non_embedding_params", self.non_embedding_params.to_string()),
            ("total_params", self.total_params.to_string()),
            ("altup_params", self.altup_params.to_string()),
            ("seq_altup_params", self.seq_altup_params.to_string()),
            ("memory_table_params", self.memory_table_params.to_string()),
            ("router_params", self.router_params.to_string()),
            ("flops_per_token_per_layer", self.flops_per_token_per_layer.to_string()),
            ("attention_flops_per_token_per_layer", self.attention_flops_per_token_per_layer.to_string()),
            ("ffn_flops_per_token_per_layer", self.ffn_flops_per_token_per_layer.to_string()),
            ("altup_overhead_flops_per_token", self.altup_overhead_flops_per_token.to_string()),
            ("forward_macs_per_sequence", self.forward_macs_per_sequence.to_string()),
            ("activation_memory_units", opt(self.activation_memory_units)),
            ("activation_memory_bytes", opt(self.activation_memory_bytes)),
        ];
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        let mut out = String::new();
        for (k, v) in rows {
            out.push_str(&format!("{k:<width$}  {v}\n"));
        }
        for a in &self.assumptions {
            out.push_str(&format!("# {a}\n"));
        }
        out
    }
}
