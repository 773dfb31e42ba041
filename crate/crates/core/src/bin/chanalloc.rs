//! Command-line front end: run experiments, compare their curves, check configs.

use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use chanalloc::experiment::{compare_runs, run_experiment, ExperimentConfig};

#[derive(Parser)]
#[command(name = "chanalloc", version, about = "Distributed channel allocation simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the replications described by a configuration file.
    Simulate {
        config: PathBuf,
        /// Override the number of replications.
        #[arg(long)]
        reps: Option<u64>,
        /// Override the master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Align `curve.csv` files on their time grid and print them side by side.
    Compare {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Parse and check a configuration file, then print its resolved form.
    Validate { config: PathBuf },
}

fn run(cli: Cli) -> chanalloc::Result<()> {
    match cli.command {
        Command::Simulate { config, reps, seed, out } => {
            let mut cfg = ExperimentConfig::from_file(&config)?;
            if let Some(r) = reps {
                cfg.reps = r;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(o) = out {
                cfg.out = o;
            }
            let summary = run_experiment(&cfg)?;
            let reps = summary.replications.len() as f64;
            let mean_regret = summary.replications.iter().map(|r| r.final_regret).sum::<f64>() / reps;
            println!(
                "{}: {} replications, mean final regret {:.3}, converged by packet 2: {:.1}%, outputs in {}",
                summary.algorithm.name(),
                summary.replications.len(),
                mean_regret,
                100.0 * summary.converged_by_packet_2,
                cfg.out.display()
            );
        }
        Command::Compare { files } => emit(&compare_runs(&files)?)?,
        Command::Validate { config } => {
            let cfg = ExperimentConfig::from_file(&config)?;
            emit(&format!(
                "{}# resolved: c_1 = {}, eps = {}\n",
                cfg.to_text(),
                cfg.resolved_explore_len(),
                cfg.resolved_eps()
            ))?;
        }
    }
    Ok(())
}

/// Writes to stdout; a reader that closed the pipe early (`| head`) is not an error.
fn emit(text: &str) -> chanalloc::Result<()> {
    match io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(chanalloc::Error::Io {
            path: "<stdout>".into(),
            source: e,
        }),
        _ => Ok(()),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
