//! Configuration, data, training, checkpoints and the gradient suite.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod suite;
pub mod train;

pub use checkpoint::Checkpoint;
pub use config::{apply_override, arch_from_json_str, load_arch, OptimizerConfig, RunConfig, TaskConfig, TaskKind};
pub use data::{load_corpus, Dataset, VOCAB_SIZE};
pub use suite::{gradient_suite, SuiteResult};
pub use train::{evaluate, init_model, load_model, metrics_csv, train, train_to_dir, MetricsRow, TrainOutcome, TrainSummary};
