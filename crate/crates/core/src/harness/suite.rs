//! Gradient checks of every layer variant on small end-to-end models.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::altup::{AltUpConfig, BlockSelection};
use crate::autodiff::GradCheckReport;
use crate::error::Result;
use crate::memory::{LookupConfig, MemoryConfig};
use crate::model::{ArchConfig, Batch, Model, Variant};
use crate::seq_altup::SeqAltUpConfig;
use crate::transformer::{ModelConfig, SeqShape};

pub const SUITE_EPS: f64 = 1e-5;
pub const SUITE_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct SuiteCase {
    pub name: String,
    pub arch: ArchConfig,
}

#[derive(Clone, Debug)]
pub struct SuiteResult {
    pub name: String,
    pub report: GradCheckReport,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.report.max_relative_error < SUITE_TOLERANCE
    }
}

fn base() -> ModelConfig {
    ModelConfig {
        d_model: 8,
        n_layers: 2,
        n_heads: 2,
        ffn_hidden: 16,
        vocab_size: 11,
        max_seq_len: 4,
    }
}

fn with(variant: Variant) -> ArchConfig {
    let mut a = ArchConfig::dense(base());
    a.variant = variant;
    a
}

/// Dense; AltUp K ∈ {1, 2, 4} with fixed and alternating blocks; Recycled
/// and Sum; sequence subsampling with strides 1, 2 and 4; stride-and-skip;
/// average pooling; softmax memory with top-1 and top-2.
pub fn suite_cases() -> Vec<SuiteCase> {
    let mut cases = vec![SuiteCase {
        name: "dense".into(),
        arch: with(Variant::Dense),
    }];
    for k in [1, 2, 4] {
        for (label, sel) in [("same", BlockSelection::Same(k - 1)), ("alternating", BlockSelection::Alternating)] {
            let mut a = with(Variant::Altup);
            a.altup = Some(AltUpConfig::new(k, sel));
            cases.push(SuiteCase {
                name: format!("altup_k{k}_{label}"),
                arch: a,
            });
        }
    }
    for v in [Variant::RecycledAltup, Variant::SumBaseline] {
        let mut a = with(v);
        a.altup = Some(AltUpConfig::new(2, BlockSelection::Alternating));
        cases.push(SuiteCase {
            name: format!("{v}_k2"),
            arch: a,
        });
    }
    let every_layer = Some((0..base().n_layers).collect());
    for stride in [1, 2, 4] {
        let mut a = with(Variant::SeqAltup);
        a.seq = Some(SeqAltUpConfig {
            stride,
            layers: every_layer.clone(),
        });
        cases.push(SuiteCase {
            name: format!("seq_altup_k{stride}"),
            arch: a,
        });
    }
    for v in [Variant::StrideSkip, Variant::AvgPool] {
        let mut a = with(v);
        a.seq = Some(SeqAltUpConfig {
            stride: 2,
            layers: every_layer.clone(),
        });
        cases.push(SuiteCase {
            name: format!("{v}_k2"),
            arch: a,
        });
    }
    for top_k in [1, 2] {
        let mut a = with(Variant::Dense);
        a.memory = Some(MemoryConfig {
            table_size: 6,
            rank: 2,
            lookup: LookupConfig::Softmax { top_k, jitter_eps: 0.0 },
            layers: None,
        });
        cases.push(SuiteCase {
            name: format!("memory_softmax_top{top_k}"),
            arch: a,
        });
    }
    cases
}

/// Run one case with seeded parameters and a random batch of one full-length
/// sequence.
pub fn run_case(case: &SuiteCase, seed: u64) -> Result<SuiteResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = Model::<f64>::new(case.arch.clone(), &mut rng)?;
    let m = &case.arch.model;
    let shape = SeqShape {
        batch: 1,
        len: m.max_seq_len,
    };
    let inputs = (0..shape.rows()).map(|_| rng.random_range(0..m.vocab_size)).collect();
    let targets = (0..shape.rows()).map(|_| rng.random_range(0..m.vocab_size)).collect();
    let batch = Batch::new(inputs, targets, shape)?;
    Ok(SuiteResult {
        name: case.name.clone(),
        report: model.grad_check(&batch, SUITE_EPS)?,
    })
}

pub fn gradient_suite(seed: u64) -> Result<Vec<SuiteResult>> {
    suite_cases().iter().map(|c| run_case(c, seed)).collect()
}
