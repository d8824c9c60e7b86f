mod commands;
mod config;
mod error;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{Overrides, RunConfig};
use error::CliError;

/// Periodic-plus-sparse decomposition and untrained anomaly detection.
#[derive(Parser)]
#[command(name = "psd", version)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// Flat JSON run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    #[arg(long, global = true, value_name = "X")]
    threshold: Option<f64>,
    /// Skip direction estimation and alignment.
    #[arg(long, global = true)]
    no_rotation: bool,
    /// Output directory (default `out`).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic image with planted anomalies.
    Synth,
    /// Decompose a 1-D signal stored as one CSV row or column.
    Decompose1d { input: PathBuf },
    /// Decompose a square image.
    Decompose2d { input: PathBuf },
    /// Detect anomalies in one image.
    Detect {
        input: PathBuf,
        /// Ground-truth mask; any nonzero pixel is anomalous.
        #[arg(long, value_name = "PATH")]
        gt: Option<PathBuf>,
        /// Also write the rotated image, decomposition, expansion and validity.
        #[arg(long)]
        debug_intermediates: bool,
    },
    /// Evaluate every image of an MVTec-style dataset.
    Eval { dataset: PathBuf },
}

fn run(cli: Cli) -> Result<PathBuf, CliError> {
    let overrides = Overrides {
        seed: cli.global.seed,
        threshold: cli.global.threshold,
        no_rotation: cli.global.no_rotation,
        out: cli.global.out,
    };
    let cfg = RunConfig::load(cli.global.config.as_deref(), &overrides)?;
    match cli.command {
        Command::Synth => commands::synth(&cfg),
        Command::Decompose1d { input } => commands::decompose1d(&input, &cfg),
        Command::Decompose2d { input } => commands::decompose2d(&input, &cfg),
        Command::Detect { input, gt, debug_intermediates } => {
            commands::detect(&input, gt.as_deref(), &cfg, debug_intermediates)
        }
        Command::Eval { dataset } => {
            let (dir, report) = commands::eval(&dataset, &cfg)?;
            print!("{}", commands::render_table(&report));
            Ok(dir)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(dir) => {
            println!("outputs written to {}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
