//! Byte tokenizer, corpus loading and batch sampling.

use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::Batch;
use crate::transformer::SeqShape;

use super::config::{TaskConfig, TaskKind};

pub const BOS: usize = 256;
pub const SEP: usize = 257;
pub const PAD: usize = 258;
/// 256 byte values plus three specials.
pub const VOCAB_SIZE: usize = 259;

/// Token ids of `text`: one per UTF-8 byte.
pub fn tokenize(text: &str) -> Vec<usize> {
    text.bytes().map(usize::from).collect()
}

/// Read a UTF-8 text file as byte tokens.
pub fn load_corpus(path: &Path) -> Result<Vec<usize>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.is_empty() {
        return Err(Error::EmptyCorpus(path.to_path_buf()));
    }
    let text = std::str::from_utf8(&bytes).map_err(|_| Error::InvalidUtf8(path.to_path_buf()))?;
    Ok(tokenize(text))
}

/// One synthetic example of `len + 1` tokens:
/// `BOS s_1 .. s_m SEP t_1 .. t_m PAD ..` where `t` is `s` (copy) or `s`
/// reversed, and `m = ⌊(len − 1)/2⌋`.
pub fn synthetic_sequence<R: Rng + ?Sized>(kind: TaskKind, len: usize, alphabet: usize, rng: &mut R) -> Vec<usize> {
    let m = (len - 1) / 2;
    let symbols: Vec<usize> = (0..m).map(|_| usize::from(b'a') + rng.random_range(0..alphabet)).collect();
    let mut seq = Vec::with_capacity(len + 1);
    seq.push(BOS);
    seq.extend(&symbols);
    seq.push(SEP);
    match kind {
        TaskKind::Reverse => seq.extend(symbols.iter().rev()),
        _ => seq.extend(&symbols),
    }
    seq.resize(len + 1, PAD);
    seq
}

#[derive(Clone, Debug)]
pub enum Dataset {
    Corpus { train: Vec<usize>, eval: Vec<usize> },
    Synthetic { kind: TaskKind, alphabet: usize },
}

impl Dataset {
    pub fn new(task: &TaskConfig) -> Result<Self> {
        match task.kind {
            TaskKind::CharLm => {
                let path = task
                    .corpus
                    .as_deref()
                    .ok_or_else(|| Error::Config("task.corpus is required for char_lm".into()))?;
                let tokens = load_corpus(path)?;
                let split = ((tokens.len() as f64) * (1.0 - task.holdout)).round() as usize;
                let (train, eval) = tokens.split_at(split);
                let need = task.seq_len + 1;
                if train.len() < need || eval.len() < need {
                    return Err(Error::InvalidArgument(format!(
                        "{}: corpus of {} bytes is too short for sequences of {} with holdout {}",
                        path.display(),
                        tokens.len(),
                        task.seq_len,
                        task.holdout
                    )));
                }
                Ok(Dataset::Corpus {
                    train: train.to_vec(),
                    eval: eval.to_vec(),
                })
            }
            kind => Ok(Dataset::Synthetic {
                kind,
                alphabet: task.alphabet,
            }),
        }
    }

    fn window_batch(windows: Vec<&[usize]>, len: usize) -> Result<Batch> {
        let shape = SeqShape {
            batch: windows.len(),
            len,
        };
        let inputs = windows.iter().flat_map(|w| w[..len].iter().copied()).collect();
        let targets = windows.iter().flat_map(|w| w[1..].iter().copied()).collect();
        Batch::new(inputs, targets, shape)
    }

    /// Random training batch.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, len: usize, rng: &mut R) -> Result<Batch> {
        match self {
            Dataset::Corpus { train, .. } => {
                let windows = (0..batch)
                    .map(|_| {
                        let start = rng.random_range(0..=train.len() - len - 1);
                        &train[start..start + len + 1]
                    })
                    .collect();
                Self::window_batch(windows, len)
            }
            Dataset::Synthetic { kind, alphabet } => {
                let seqs: Vec<Vec<usize>> =
                    (0..batch).map(|_| synthetic_sequence(*kind, len, *alphabet, rng)).collect();
                Self::window_batch(seqs.iter().map(Vec::as_slice).collect(), len)
            }
        }
    }

    /// Fixed evaluation batches. Corpus windows tile the held-out split from
    /// its start; synthetic ones are drawn from `rng`.
    pub fn eval_set<R: Rng + ?Sized>(&self, batches: usize, batch: usize, len: usize, rng: &mut R) -> Result<Vec<Batch>> {
        match self {
            Dataset::Corpus { eval, .. } => {
                let windows: Vec<&[usize]> = eval.windows(len + 1).step_by(len).take(batches * batch).collect();
                windows.chunks(batch).map(|c| Self::window_batch(c.to_vec(), len)).collect()
            }
            Dataset::Synthetic { .. } => (0..batches).map(|_| self.sample(batch, len, rng)).collect(),
        }
    }
}
