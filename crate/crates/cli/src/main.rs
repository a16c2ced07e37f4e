use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use altup::cost::{count_params, CostOptions};
use altup::error::Error;
use altup::harness::train::{eval_set, load_model};
use altup::harness::{gradient_suite, load_arch, train_to_dir, Dataset, RunConfig};
use altup::lsh_analysis::{verify_ordering, write_csv, CollisionSetup, HYPERPLANE_WIDTHS};
use altup::model::Model;
use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;

#[derive(Parser)]
#[command(name = "altup", version, about = "Train, inspect and analyse AltUp transformer variants")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Override a configuration value, e.g. `--set optimizer.steps=100`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write metrics.csv, summary.json and checkpoint.bin.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        seed: u64,
        /// Output directory.
        #[arg(long, default_value = "run")]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on the held-out set of its task.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Parameter, FLOP and activation-memory report.
    Cost {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value_t = 1)]
        batch_size: usize,
        #[arg(long, default_value_t = 8)]
        bytes_per_element: usize,
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Monte Carlo collision rates of the lookup functions.
    Collide {
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 1024)]
        n: usize,
        #[arg(long, default_value_t = 64)]
        d: usize,
        #[arg(long, default_value_t = 64)]
        l: usize,
        #[arg(long, default_value_t = 50_000)]
        trials: usize,
        /// Comma-separated overlap fractions.
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.25,0.5")]
        f: Vec<f64>,
        /// Comma-separated hyperplane bucket widths.
        #[arg(long, value_delimiter = ',')]
        widths: Option<Vec<f64>>,
        /// CSV output file (stdout when absent).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Gradient checks of every layer variant.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Per-tensor parameter counts checked against the closed form.
    Census {
        #[command(flatten)]
        config: ConfigArgs,
    },
}

/// Error with the process exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if matches!(e, Error::Config(_)) { 1 } else { 2 };
        Failure { code, error: e.into() }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Failure { code: 2, error }
    }
}

fn config_failure(e: Error) -> Failure {
    Failure { code: 1, error: e.into() }
}

fn load_run(args: &ConfigArgs) -> Result<RunConfig, Failure> {
    RunConfig::load(&args.config, &args.overrides).map_err(config_failure)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Train { config, seed, out } => {
            let mut cfg = load_run(&config)?;
            cfg.seed = seed;
            let outcome = train_to_dir(&cfg, &out)?;
            for row in &outcome.rows {
                println!(
                    "step {:>6}  train {:.4}  eval {:.4}  acc {:.4}",
                    row.step, row.train_loss, row.eval_loss, row.eval_token_accuracy
                );
            }
            println!(
                "params {}  tokens/s {:.0}  wrote {}",
                outcome.summary.parameter_census,
                outcome.summary.tokens_per_second,
                out.display()
            );
        }
        Command::Eval { config, checkpoint, seed } => {
            let mut cfg = load_run(&config)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let model = load_model(&cfg, &checkpoint)?;
            let data = Dataset::new(&cfg.task)?;
            let batches = eval_set(&cfg, &data)?;
            let (loss, acc) = altup::harness::evaluate(&model, &batches)?;
            let report = serde_json::json!({ "eval_loss": loss, "eval_token_accuracy": acc });
            println!("{}", serde_json::to_string_pretty(&report).context("serialising report")?);
        }
        Command::Cost {
            config,
            batch_size,
            bytes_per_element,
            json,
        } => {
            let arch = load_arch(&config.config, &config.overrides).map_err(config_failure)?;
            let report = count_params(
                &arch,
                CostOptions {
                    batch_size,
                    bytes_per_element,
                },
            );
            if json {
                println!("{}", serde_json::to_string_pretty(&report).context("serialising report")?);
            } else {
                print!("{}", report.to_table());
            }
        }
        Command::Collide {
            seed,
            n,
            d,
            l,
            trials,
            f,
            widths,
            out,
        } => {
            let widths = widths.unwrap_or_else(|| HYPERPLANE_WIDTHS.to_vec());
            let mut reports = Vec::new();
            for &f in &f {
                let setup = CollisionSetup {
                    n,
                    l,
                    f,
                    d,
                    trials,
                    seed,
                };
                let report = verify_ordering(&setup, &widths).map_err(|e| match e {
                    Error::InvalidArgument(m) => Failure::from(Error::Config(m)),
                    e => e.into(),
                })?;
                eprintln!(
                    "f={f}: token_id {:.5}  spherical {:.5}  best {} {:.5}  minhash {:.5}  ordered {}",
                    report.token_id.probability,
                    report.spherical.probability,
                    report.best().scheme,
                    report.best().probability,
                    report.minhash.probability,
                    report.ordered
                );
                reports.push(report);
            }
            let rows: Vec<_> = reports.iter().flat_map(|r| r.all()).collect();
            match out {
                Some(path) => {
                    let file = std::fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
                    let mut w = std::io::BufWriter::new(file);
                    write_csv(&mut w, &rows).with_context(|| format!("writing {}", path.display()))?;
                    w.flush().with_context(|| format!("writing {}", path.display()))?;
                }
                None => write_csv(std::io::stdout().lock(), &rows).context("writing stdout")?,
            }
        }
        Command::Gradcheck { seed } => {
            let results = gradient_suite(seed)?;
            let mut failed = 0;
            for r in &results {
                let verdict = if r.passed() { "ok" } else { "FAIL" };
                failed += usize::from(!r.passed());
                println!(
                    "{:<26} {:>10.3e}  worst {}[{}]  {verdict}",
                    r.name, r.report.max_relative_error, r.report.worst_param, r.report.worst_index
                );
            }
            if failed > 0 {
                return Err(anyhow::anyhow!("{failed} gradient checks above tolerance").into());
            }
        }
        Command::Census { config } => {
            let arch = load_arch(&config.config, &config.overrides).map_err(config_failure)?;
            let model = Model::<f64>::new(arch.clone(), &mut rand_chacha::ChaCha8Rng::seed_from_u64(0))?;
            for (name, t) in model.params.iter() {
                println!("{name:<28} {:>12}  {:?}", t.numel(), t.shape());
            }
            let report = count_params(&arch, CostOptions::default());
            println!("{:<28} {:>12}", "total", model.census());
            println!("{:<28} {:>12}", "closed form", report.total_params);
            if model.census() as u64 != report.total_params {
                return Err(anyhow::anyhow!("census differs from the closed-form count").into());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // Usage mistakes count as configuration errors.
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
