use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dedpul_cli::config::{load_experiment, load_sweep};
use dedpul_cli::run::{self, write_json};

#[derive(Parser)]
#[command(name = "dedpul", version, about = "Positive-unlabeled prior and posterior estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured methods on one dataset and print a JSON report.
    Estimate {
        #[arg(long)]
        config: PathBuf,
        /// Write the report here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Include per-point posteriors in the report.
        #[arg(long)]
        include_posteriors: bool,
    },
    /// Sweep synthetic mixtures and score every method against the oracle.
    SynthBench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the empirical D-curve as `alpha,D` CSV.
    Dcurve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the smoothed ratio curve as `y,r` CSV.
        #[arg(long)]
        ratio_out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), run::RunError> {
    match cmd {
        Command::Estimate {
            config,
            out,
            include_posteriors,
        } => {
            let mut cfg = load_experiment(&config)?;
            cfg.include_posteriors |= include_posteriors;
            write_json(&run::estimate(&cfg)?, out.as_deref())
        }
        Command::SynthBench { config, out } => {
            let cfg = load_sweep(&config)?;
            write_json(&run::synth_bench(&cfg)?, Some(&out))
        }
        Command::Dcurve {
            config,
            out,
            ratio_out,
        } => {
            let cfg = load_experiment(&config)?;
            let (d, curve) = run::dcurve(&cfg)?;
            run::write_dcurve(&out, &d)?;
            match ratio_out {
                Some(p) => run::write_ratio(&p, &curve),
                None => Ok(()),
            }
        }
    }
}
