//! Run configuration: JSON with unknown keys rejected, plus dotted-path
//! overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::altup::AltUpConfig;
use crate::error::{Error, Result};
use crate::memory::MemoryConfig;
use crate::model::{ArchConfig, Variant};
use crate::seq_altup::SeqAltUpConfig;
use crate::transformer::ModelConfig;

use super::data::VOCAB_SIZE;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    CharLm,
    Copy,
    Reverse,
}

fn default_alphabet() -> usize {
    8
}

fn default_eval_batches() -> usize {
    4
}

fn default_holdout() -> f64 {
    0.1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub kind: TaskKind,
    /// Tokens per training sequence.
    pub seq_len: usize,
    /// Byte corpus for `char_lm`.
    #[serde(default)]
    pub corpus: Option<PathBuf>,
    /// Distinct symbols drawn by the synthetic tasks.
    #[serde(default = "default_alphabet")]
    pub alphabet: usize,
    /// Fraction of the corpus held out for evaluation.
    #[serde(default = "default_holdout")]
    pub holdout: f64,
    #[serde(default = "default_eval_batches")]
    pub eval_batches: usize,
}

fn default_eval_interval() -> usize {
    100
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub momentum: f64,
    /// Rescale the full gradient to at most this Euclidean norm.
    #[serde(default)]
    pub max_grad_norm: Option<f64>,
    #[serde(default = "default_eval_interval")]
    pub eval_interval: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub variant: Variant,
    #[serde(default)]
    pub altup: Option<AltUpConfig>,
    #[serde(default)]
    pub seq: Option<SeqAltUpConfig>,
    #[serde(default)]
    pub memory: Option<MemoryConfig>,
    pub task: TaskConfig,
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub seed: u64,
}

impl RunConfig {
    pub fn arch(&self) -> ArchConfig {
        ArchConfig {
            model: self.model.clone(),
            variant: self.variant,
            altup: self.altup,
            seq: self.seq.clone(),
            memory: self.memory.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.arch().validate()?;
        if self.model.vocab_size != VOCAB_SIZE {
            return Err(Error::Config(format!(
                "model.vocab_size must be {VOCAB_SIZE} (bytes plus special tokens)"
            )));
        }
        let t = &self.task;
        if t.seq_len < 2 || t.seq_len > self.model.max_seq_len {
            return Err(Error::Config(format!(
                "task.seq_len must be in 2..={}",
                self.model.max_seq_len
            )));
        }
        if t.eval_batches == 0 {
            return Err(Error::Config("task.eval_batches must be positive".into()));
        }
        match t.kind {
            TaskKind::CharLm => {
                if t.corpus.is_none() {
                    return Err(Error::Config("task.corpus is required for char_lm".into()));
                }
                if !(t.holdout > 0.0 && t.holdout < 1.0) {
                    return Err(Error::Config("task.holdout must be in (0, 1)".into()));
                }
            }
            TaskKind::Copy | TaskKind::Reverse => {
                if t.alphabet == 0 || t.alphabet > 256 {
                    return Err(Error::Config("task.alphabet must be in 1..=256".into()));
                }
                if t.seq_len < 3 {
                    return Err(Error::Config("synthetic tasks need task.seq_len >= 3".into()));
                }
            }
        }
        let o = &self.optimizer;
        if !(o.learning_rate > 0.0 && o.learning_rate.is_finite()) {
            return Err(Error::Config("optimizer.learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&o.momentum) {
            return Err(Error::Config("optimizer.momentum must be in [0, 1)".into()));
        }
        if o.batch_size == 0 || o.eval_interval == 0 {
            return Err(Error::Config("optimizer.batch_size and eval_interval must be positive".into()));
        }
        if o.max_grad_norm.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::Config("optimizer.max_grad_norm must be positive".into()));
        }
        Ok(())
    }

    /// Parse and validate a JSON document after applying `key=value`
    /// overrides.
    pub fn from_json_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut value: Value = serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid JSON: {e}")))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let cfg: RunConfig = serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json_str(&text, overrides)?;
        // Relative corpus paths are resolved against the config file.
        if let (Some(corpus), Some(dir)) = (&cfg.task.corpus, path.parent()) {
            if corpus.is_relative() && !corpus.exists() {
                cfg.task.corpus = Some(dir.join(corpus));
            }
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }
}

/// Architecture part of a run configuration (or a file holding only those
/// keys), with overrides applied. Unlike [`RunConfig`] the vocabulary size is
/// free, so cost queries can describe models of any size.
pub fn load_arch(path: &Path, overrides: &[String]) -> Result<ArchConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    arch_from_json_str(&text, overrides)
}

pub fn arch_from_json_str(text: &str, overrides: &[String]) -> Result<ArchConfig> {
    let mut value: Value = serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid JSON: {e}")))?;
    for o in overrides {
        apply_override(&mut value, o)?;
    }
    if let Value::Object(map) = &mut value {
        for key in ["task", "optimizer", "seed"] {
            map.remove(key);
        }
    }
    let arch: ArchConfig = serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
    arch.validate()?;
    Ok(arch)
}

/// Set `a.b.c=value` inside a JSON object. The value is parsed as JSON when
/// possible and taken as a string otherwise. Missing intermediate objects
/// are created.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
    if path.is_empty() || path.split('.').any(str::is_empty) {
        return Err(Error::Config(format!("override `{assignment}` has an empty key")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let mut parts = path.split('.').peekable();
    while let Some(key) = parts.next() {
        let obj = match node {
            Value::Object(map) => map,
            Value::Null => {
                *node = Value::Object(Default::default());
                node.as_object_mut().expect("just set")
            }
            _ => return Err(Error::Config(format!("override `{path}`: `{key}` is inside a non-object"))),
        };
        if parts.peek().is_none() {
            obj.insert(key.to_string(), value);
            return Ok(());
        }
        node = obj.entry(key.to_string()).or_insert(Value::Null);
    }
    unreachable!("path has at least one component")
}
