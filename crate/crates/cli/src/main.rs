//! `abcr`: robust ABC fits, sensitivity runs and simulation studies from the
//! command line.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::ModelKind;

#[derive(Parser)]
#[command(name = "abcr", version, about = "Robust approximate Bayesian computation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
pub struct Common {
    /// TOML run configuration; flags override its values.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: `$ABCR_OUTPUT_DIR/<command>` or
    /// `abcr-out/<command>`).
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args, Clone, Default)]
pub struct ModelArgs {
    #[arg(long, value_enum)]
    model: Option<ModelKind>,
    /// Response to select from a long-format file.
    #[arg(long)]
    response: Option<String>,
    /// Include gender and its interactions with treatment.
    #[arg(long)]
    interaction: bool,
    /// Value transform for long-format responses: identity, log or log1p.
    #[arg(long)]
    transform: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve, estimate the sandwich, calibrate h and run the ABC-R chain.
    Fit {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelArgs,
        /// Data CSV: a `y` column for the toy model, long format for the LMM.
        #[arg(long)]
        data: PathBuf,
        /// Fixed kernel scale; skips calibration.
        #[arg(long)]
        h: Option<f64>,
        #[arg(long)]
        n_iter: Option<usize>,
        /// Also fit the full-likelihood posterior by adaptive MH.
        #[arg(long, value_parser = ["mcmc"])]
        baseline: Option<String>,
    },
    /// Calibrate the kernel scale only.
    Calibrate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        data: PathBuf,
    },
    /// Simulate a dataset from the toy model or a one-way LMM.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        model: Option<ModelKind>,
        /// Sample size (toy) or number of groups (LMM).
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        inflation: Option<f64>,
    },
    /// Shift the middle order statistic of a normal sample and refit.
    Sensitivity {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n_iter: Option<usize>,
    },
    /// ABC-R vs full-likelihood MCMC on simulated one-way mixed models.
    Simstudy {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        q: Option<usize>,
        #[arg(long)]
        g: Option<usize>,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        inflation: Option<f64>,
    },
    /// Write a synthetic long-format immunology-style dataset.
    GenSynthetic {
        #[command(flatten)]
        common: Common,
        /// Share of units with heavy-tailed residuals.
        #[arg(long)]
        heavy_tail_fraction: Option<f64>,
    },
}

/// A failure reported as JSON on stderr with a distinguishing exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub kind: String,
    pub message: String,
}

impl CliError {
    pub const CONFIG: u8 = 2;
    pub const NUMERIC: u8 = 3;

    pub fn config(message: impl Into<String>) -> Self {
        Self { code: Self::CONFIG, kind: "Config".into(), message: message.into() }
    }
}

impl From<abcr::Error> for CliError {
    fn from(e: abcr::Error) -> Self {
        let code = if e.is_numeric() { Self::NUMERIC } else { Self::CONFIG };
        Self { code, kind: e.kind().into(), message: e.to_string() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self { code: Self::CONFIG, kind: "Io".into(), message: e.to_string() }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit { common, model, data, h, n_iter, baseline } => {
            commands::fit(&common, &model, &data, h, n_iter, baseline.is_some())
        }
        Command::Calibrate { common, model, data } => commands::calibrate(&common, &model, &data),
        Command::Simulate { common, model, n, epsilon, inflation } => commands::simulate(&common, model, n, epsilon, inflation),
        Command::Sensitivity { common, n_iter } => commands::sensitivity(&common, n_iter),
        Command::Simstudy { common, q, g, reps, epsilon, inflation } => {
            commands::simstudy(&common, q, g, reps, epsilon, inflation)
        }
        Command::GenSynthetic { common, heavy_tail_fraction } => commands::gen_synthetic(&common, heavy_tail_fraction),
    };
    match result {
        Ok(dir) => {
            println!("{}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            let json = serde_json::json!({ "error": e.kind, "message": e.message, "exit_code": e.code });
            eprintln!("{json}");
            ExitCode::from(e.code)
        }
    }
}
