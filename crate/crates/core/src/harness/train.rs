//! Deterministic SGD training loop, evaluation and metrics output.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::Graph;
use crate::cost::{count_params, CostOptions};
use crate::error::{Error, Result};
use crate::model::{Batch, Model};
use crate::tensor::Tensor;

use super::checkpoint;
use super::config::RunConfig;
use super::data::Dataset;

/// Independent random streams derived from the run seed.
#[derive(Clone, Copy, Debug)]
pub enum Stream {
    Init = 0,
    Data = 1,
    Jitter = 2,
    Eval = 3,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsRow {
    pub step: usize,
    /// Mean pre-update loss over the training batches since the last row.
    pub train_loss: f64,
    pub eval_loss: f64,
    pub eval_token_accuracy: f64,
    pub tokens_per_second: f64,
    pub parameter_census: usize,
}

/// CSV columns. Throughput is wall-clock dependent and only reported in the
/// JSON summary, which keeps the CSV reproducible byte for byte.
pub const METRICS_HEADER: &str = "step,train_loss,eval_loss,eval_token_accuracy,parameter_census";

impl MetricsRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{:?},{:?},{:?},{}",
            self.step, self.train_loss, self.eval_loss, self.eval_token_accuracy, self.parameter_census
        )
    }
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{}", r.csv_line());
    }
    out
}

#[derive(Clone, Debug, Serialize)]
pub struct TrainSummary {
    pub config: RunConfig,
    pub steps: usize,
    pub initial_train_loss: f64,
    pub final_train_loss: f64,
    /// `1 − final / initial` of the train-loss column.
    pub train_loss_reduction: f64,
    pub final_eval_loss: f64,
    pub final_eval_token_accuracy: f64,
    pub parameter_census: usize,
    pub closed_form_params: u64,
    pub tokens_per_second: f64,
    pub wall_seconds: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub rows: Vec<MetricsRow>,
    pub summary: TrainSummary,
    pub model: Model<f64>,
}

/// Mean loss and next-token accuracy over `batches`, weighted by rows.
pub fn evaluate(model: &Model<f64>, batches: &[Batch]) -> Result<(f64, f64)> {
    let (mut loss, mut correct, mut rows) = (0.0, 0usize, 0usize);
    for b in batches {
        let mut g = Graph::new();
        let bound = model.bind(&mut g);
        let (l, out) = model.loss(&mut g, &bound, b, None)?;
        let n = out.targets.len();
        loss += g.value(l).item() * n as f64;
        let logits = g.value(out.logits);
        for (r, &t) in out.targets.iter().enumerate() {
            let row = logits.row(r);
            let best = (0..row.len()).fold(0, |best, j| if row[j] > row[best] { j } else { best });
            correct += usize::from(best == t);
        }
        rows += n;
    }
    if rows == 0 {
        return Err(Error::InvalidArgument("empty evaluation set".into()));
    }
    Ok((loss / rows as f64, correct as f64 / rows as f64))
}

/// Build the model of `cfg` with its seeded initial parameters.
pub fn init_model(cfg: &RunConfig) -> Result<Model<f64>> {
    Model::new(cfg.arch(), &mut stream_rng(cfg.seed, Stream::Init))
}

pub fn eval_set(cfg: &RunConfig, data: &Dataset) -> Result<Vec<Batch>> {
    data.eval_set(
        cfg.task.eval_batches,
        cfg.optimizer.batch_size,
        cfg.task.seq_len,
        &mut stream_rng(cfg.seed, Stream::Eval),
    )
}

fn diverged(step: usize, e: Error) -> Error {
    match e {
        Error::NonFinite(_) => Error::Divergence { step, loss: f64::NAN },
        e => e,
    }
}

/// Train from the seeded initialisation. Fully deterministic apart from the
/// throughput fields.
pub fn train(cfg: &RunConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let started = Instant::now();
    let opt = &cfg.optimizer;
    let data = Dataset::new(&cfg.task)?;
    let mut model = init_model(cfg)?;
    let census = model.census();
    let eval = eval_set(cfg, &data)?;
    let mut data_rng = stream_rng(cfg.seed, Stream::Data);
    let mut jitter_rng = stream_rng(cfg.seed, Stream::Jitter);
    let mut velocity: Vec<Tensor<f64>> = model.params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();

    let mut rows = Vec::new();
    let first = data.sample(opt.batch_size, cfg.task.seq_len, &mut data_rng)?;
    let tokens_per_batch = first.shape.rows();

    let initial = {
        let mut g = Graph::new();
        let bound = model.bind(&mut g);
        let (l, _) = model.loss(&mut g, &bound, &first, None).map_err(|e| diverged(0, e))?;
        g.value(l).item()
    };
    let (eval_loss, acc) = evaluate(&model, &eval)?;
    rows.push(MetricsRow {
        step: 0,
        train_loss: initial,
        eval_loss,
        eval_token_accuracy: acc,
        tokens_per_second: 0.0,
        parameter_census: census,
    });

    let (mut window_loss, mut window_steps) = (0.0, 0usize);
    let mut window_start = Instant::now();
    let mut pending = Some(first);
    for step in 0..opt.steps {
        let batch = match pending.take() {
            Some(b) => b,
            None => data.sample(opt.batch_size, cfg.task.seq_len, &mut data_rng)?,
        };
        let mut g = Graph::new();
        let bound = model.bind(&mut g);
        let (loss, _) = model
            .loss(&mut g, &bound, &batch, Some(&mut jitter_rng))
            .map_err(|e| diverged(step, e))?;
        let value = g.value(loss).item();
        if !value.is_finite() {
            return Err(Error::Divergence { step, loss: value });
        }
        g.backward(loss).map_err(|e| diverged(step, e))?;

        let grads: Vec<Option<&Tensor<f64>>> = bound.nodes().iter().map(|&n| g.grad(n)).collect();
        let norm = grads
            .iter()
            .flatten()
            .flat_map(|t| t.data())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        if !norm.is_finite() {
            return Err(Error::Divergence { step, loss: value });
        }
        let clip = opt.max_grad_norm.map_or(1.0, |c| if norm > c { c / norm } else { 1.0 });
        for (((_, p), v), grad) in model.params.tensors_mut().zip(&mut velocity).zip(&grads) {
            let Some(grad) = grad else { continue };
            for ((pv, vv), gv) in p.data_mut().iter_mut().zip(v.data_mut()).zip(grad.data()) {
                *vv = opt.momentum * *vv + clip * gv;
                *pv -= opt.learning_rate * *vv;
            }
        }
        drop(g);
        if model.params.iter().any(|(_, t)| !t.is_finite()) {
            return Err(Error::Divergence { step, loss: value });
        }

        window_loss += value;
        window_steps += 1;
        let done = step + 1;
        if done % opt.eval_interval == 0 || done == opt.steps {
            let secs = window_start.elapsed().as_secs_f64();
            let (eval_loss, acc) = evaluate(&model, &eval)?;
            rows.push(MetricsRow {
                step: done,
                train_loss: window_loss / window_steps as f64,
                eval_loss,
                eval_token_accuracy: acc,
                tokens_per_second: if secs > 0.0 {
                    (window_steps * tokens_per_batch) as f64 / secs
                } else {
                    0.0
                },
                parameter_census: census,
            });
            window_loss = 0.0;
            window_steps = 0;
            window_start = Instant::now();
        }
    }

    let wall = started.elapsed().as_secs_f64();
    let last = rows.last().expect("row 0 exists").clone();
    let summary = TrainSummary {
        config: cfg.clone(),
        steps: opt.steps,
        initial_train_loss: initial,
        final_train_loss: last.train_loss,
        train_loss_reduction: 1.0 - last.train_loss / initial,
        final_eval_loss: last.eval_loss,
        final_eval_token_accuracy: last.eval_token_accuracy,
        parameter_census: census,
        closed_form_params: count_params(&cfg.arch(), CostOptions::default()).total_params,
        tokens_per_second: if wall > 0.0 {
            (opt.steps * tokens_per_batch) as f64 / wall
        } else {
            0.0
        },
        wall_seconds: wall,
    };
    Ok(TrainOutcome { rows, summary, model })
}

pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";

/// Train and write the metrics CSV, JSON summary and final checkpoint into
/// `dir`.
pub fn train_to_dir(cfg: &RunConfig, dir: &Path) -> Result<TrainOutcome> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let outcome = train(cfg)?;
    let write = |name: &str, contents: &[u8]| {
        let path = dir.join(name);
        std::fs::write(&path, contents).map_err(|e| Error::io(path, e))
    };
    write(METRICS_FILE, metrics_csv(&outcome.rows).as_bytes())?;
    let summary = serde_json::to_string_pretty(&outcome.summary).expect("summary serialises");
    write(SUMMARY_FILE, summary.as_bytes())?;
    checkpoint::save(&dir.join(CHECKPOINT_FILE), &outcome.model.params, &cfg.to_json())?;
    Ok(outcome)
}

/// Rebuild the model of `cfg` and load parameters from a checkpoint file.
pub fn load_model(cfg: &RunConfig, path: &Path) -> Result<Model<f64>> {
    let mut model = init_model(cfg)?;
    let ckpt = checkpoint::load(path)?;
    ckpt.restore_into(&mut model.params)?;
    Ok(model)
}
