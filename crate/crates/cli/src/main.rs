//! `ddlpf`: generate power-flow datasets, fit affine models, score them and
//! export trimmed fits as MPS files.
//!
//! Exit codes: 0 on success, 1 for invalid configuration or arguments, 2 for
//! failures while running. Every error line on stderr starts with `error:`.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lpf_core::trimmed::TrimModelKind;

#[derive(Debug)]
pub enum CliError {
    Validation(Vec<String>),
    Runtime(Vec<String>),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }

    fn lines(&self) -> &[String] {
        match self {
            CliError::Validation(l) | CliError::Runtime(l) => l,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "ddlpf", version, about = "Outlier-immune data-driven linear power flow experiments")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (1 for fully sequential runs).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Replace the configured seed list with this single seed.
    #[arg(long, global = true)]
    seed_override: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write training (with outliers) and test datasets for every seed.
    Generate,
    /// Fit every configured method on the training sets.
    Fit {
        /// Directory holding the datasets (default: the output directory).
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Score saved models and write report.csv and report.md.
    Report {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Export the trimmed fit of a training set as an MPS model.
    ExportMps {
        /// `squared` or `absolute`.
        #[arg(long, default_value = "squared")]
        which: TrimModelKind,
        /// Training seed (default: the first configured seed).
        #[arg(long)]
        seed: Option<u64>,
        /// Outlier ratio (default: the first configured p value).
        #[arg(long)]
        p: Option<f64>,
        #[arg(long)]
        data: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Validation(vec!["--threads must be positive".into()]));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(vec![format!("thread pool: {e}")]))?;
    }
    let Some(config_path) = cli.config.as_deref() else {
        return Err(CliError::Validation(vec!["--config is required".into()]));
    };
    let cfg = config::load_config(config_path, cli.out.as_deref(), cli.seed_override)?;
    let data_dir = |d: Option<PathBuf>| d.unwrap_or_else(|| cfg.output_dir.clone());
    match cli.command {
        Command::Generate => commands::generate(&cfg),
        Command::Fit { data } => commands::fit(&cfg, &data_dir(data)),
        Command::Report { data } => commands::report(&cfg, &data_dir(data)).map(|_| ()),
        Command::ExportMps { which, seed, p, data } => {
            let seed = seed.unwrap_or(cfg.spec.seeds[0]);
            let p = p.or_else(|| cfg.spec.p_values.first().copied()).unwrap_or(cfg.spec.p0);
            if !(0.0..0.5).contains(&p) {
                return Err(CliError::Validation(vec![format!("--p {p} outside [0, 0.5)")]));
            }
            commands::export(&cfg, &data_dir(data), which, seed, p).map(|_| ())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            for line in e.to_string().lines().filter(|l| !l.trim().is_empty()) {
                let line = line.strip_prefix("error: ").unwrap_or(line);
                eprintln!("error: {line}");
            }
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            for line in e.lines() {
                eprintln!("error: {line}");
            }
            ExitCode::from(e.code())
        }
    }
}
