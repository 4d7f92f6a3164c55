use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use tbigan::cli;

/// Transformer bidirectional GAN for unsupervised anomaly detection in
/// synchrophasor streams.
#[derive(Parser)]
#[command(name = "tbigan", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic train/test PMU streams with injected anomalies.
    Synth {
        /// Key-value generator config.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Fit preprocessing and train a model.
    Train {
        /// Run config TOML.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score a stream against a checkpoint, emitting the trace CSV.
    Score {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a labeled score trace (window and/or frame level).
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Trace CSV (overrides data.trace_csv).
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Random hyperparameter search selected by validation AP.
    Search {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // clap prints help/version through the same error path
            if e.use_stderr() {
                eprintln!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    let result = match cli.command {
        Command::Synth { config, out, seed } => cli::cmd_synth(&config, out.as_deref(), seed),
        Command::Train { config, out, seed } => cli::cmd_train(&config, out.as_deref(), seed),
        Command::Score { config, out, seed } => cli::cmd_score(&config, out.as_deref(), seed),
        Command::Evaluate {
            config,
            out,
            trace,
            seed: _,
        } => cli::cmd_evaluate(&config, out.as_deref(), trace.as_deref()),
        Command::Search { config, out, seed } => cli::cmd_search(&config, out.as_deref(), seed),
    };
    match result {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
