use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use pclab::diagnose::{self, Table};
use pclab::metrics::{write_csv, RunStatus};
use pclab::train::train_with;
use pclab::{ExperimentConfig, HarnessError};
use pclab_core::diagnostics::matmul_count;
use pclab_core::optim::Algorithm;

#[derive(Parser)]
#[command(name = "pclab", version, about = "Train and probe predictive-coding networks")]
struct Cli {
    /// Overrides the seed in the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Where to write the CSV output (default: the config's `out`, else stdout).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network and write per-epoch metrics.
    Train { config: PathBuf },
    /// Run one of the theory diagnostics.
    Diagnose { kind: Diagnostic, config: PathBuf },
    /// Print the matrix products one training iteration needs.
    CountOps {
        #[arg(long)]
        algorithm: Algorithm,
        #[arg(long)]
        layers: usize,
        /// Inference iterations (ignored by bp).
        #[arg(long = "T", default_value_t = 0)]
        iterations: usize,
    },
    /// Compare analytic gradients with central differences.
    Gradcheck { config: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum Diagnostic {
    Prox,
    Lemma1,
    Theorem2,
    ErrorTrace,
}

fn load(path: &Path, cli: &Cli) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = ExperimentConfig::from_file(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if cli.out.is_some() {
        cfg.out = cli.out.clone();
    }
    Ok(cfg)
}

/// Writes only once the output is complete, so failures leave no partial
/// file behind.
fn emit(out: Option<&Path>, write: impl FnOnce(&mut Vec<u8>) -> Result<(), HarnessError>) -> Result<(), HarnessError> {
    let mut buf = Vec::new();
    write(&mut buf)?;
    match out {
        Some(path) => {
            let io = |source| HarnessError::Io {
                path: path.into(),
                source,
            };
            let mut f = BufWriter::new(File::create(path).map_err(io)?);
            f.write_all(&buf).map_err(io)?;
            f.flush().map_err(io)
        }
        None => io::stdout().write_all(&buf).map_err(|source| HarnessError::Io {
            path: "<stdout>".into(),
            source,
        }),
    }
}

fn emit_table(cfg: &ExperimentConfig, table: &Table) -> Result<(), HarnessError> {
    emit(cfg.out.as_deref(), |buf| table.write_csv(buf))
}

fn run(cli: &Cli) -> Result<ExitCode, HarnessError> {
    match &cli.command {
        Command::Train { config } => {
            let cfg = load(config, cli)?;
            let (train_set, test_set) = cfg.load_data()?;
            eprintln!(
                "{} samples for training, {} for testing; {} with {}",
                train_set.len(),
                test_set.len(),
                cfg.algorithm,
                cfg.optimizer
            );
            let outcome = train_with(&cfg, &train_set, &test_set, |r| {
                let acc = r.test_accuracy.map_or(String::new(), |a| format!(" accuracy {:.4}", a));
                eprintln!(
                    "epoch {:>3} iter {:>6} train {:.6} test {:.6}{acc}",
                    r.epoch, r.iteration, r.train_loss, r.test_loss
                );
            })?;
            emit(cfg.out.as_deref(), |buf| write_csv(buf, &outcome.records))?;
            if outcome.status == RunStatus::Diverged {
                eprintln!("training diverged at iteration {}", outcome.iterations);
                return Ok(ExitCode::from(3));
            }
        }
        Command::Diagnose { kind, config } => {
            let cfg = load(config, cli)?;
            let table = match kind {
                Diagnostic::Prox => diagnose::prox(&cfg)?,
                Diagnostic::Lemma1 => diagnose::lemma1(&cfg)?,
                Diagnostic::Theorem2 => diagnose::theorem2(&cfg)?,
                Diagnostic::ErrorTrace => diagnose::error_trace_table(&cfg)?,
            };
            emit_table(&cfg, &table)?;
        }
        Command::CountOps {
            algorithm,
            layers,
            iterations,
        } => {
            let count = matmul_count(*algorithm, *layers, *iterations)?;
            emit(cli.out.as_deref(), |buf| {
                writeln!(buf, "{}", count.matmuls).expect("writing to memory");
                Ok(())
            })?;
        }
        Command::Gradcheck { config } => {
            let cfg = load(config, cli)?;
            let (table, pass) = diagnose::gradcheck(&cfg)?;
            emit_table(&cfg, &table)?;
            if !pass {
                eprintln!("gradient check failed");
                return Ok(ExitCode::from(2));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
