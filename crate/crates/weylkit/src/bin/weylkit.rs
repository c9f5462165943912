//! Command-line front end: parse a job configuration, run the task, write
//! artifacts and print the machine-readable summary.

use clap::Parser;
use std::path::PathBuf;
use std::process::ExitCode;

use weylkit::config::JobConfig;
use weylkit::error::WkError;
use weylkit::runner::{run, Overrides};

#[derive(Parser)]
#[command(
    name = "weylkit",
    about = "m-functions and spectral functions of first-order symmetric ODE systems"
)]
struct Cli {
    /// Job configuration (TOML)
    #[arg(long)]
    config: PathBuf,

    /// Override the task declared in the configuration
    #[arg(long)]
    task: Option<String>,

    /// Worker count for grid sweeps (fallback: WEYLKIT_WORKERS, then 1)
    #[arg(long)]
    workers: Option<usize>,

    /// Output directory for artifacts
    #[arg(long, default_value = "out")]
    out: PathBuf,

    /// Tolerance profile
    #[arg(long, value_parser = ["default", "strict"], default_value = "default")]
    tol_profile: String,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let text = match std::fs::read_to_string(&cli.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", cli.config.display());
            return ExitCode::from(2);
        }
    };
    let cfg = match JobConfig::from_toml(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let overrides = Overrides {
        task: cli.task.as_deref(),
        workers: cli.workers,
        strict: cli.tol_profile == "strict",
    };
    match run(&cfg, &overrides) {
        Ok(output) => {
            if !output.artifacts.is_empty() {
                if let Err(e) = std::fs::create_dir_all(&cli.out) {
                    eprintln!("error: cannot create {}: {e}", cli.out.display());
                    return ExitCode::from(3);
                }
                for artifact in &output.artifacts {
                    let path = cli.out.join(&artifact.name);
                    if let Err(e) = std::fs::write(&path, &artifact.contents) {
                        eprintln!("error: cannot write {}: {e}", path.display());
                        return ExitCode::from(3);
                    }
                }
            }
            println!("{}", serde_json::to_string_pretty(&output.summary).unwrap());
            ExitCode::SUCCESS
        }
        Err(WkError::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(e) => {
            let kind = format!("{e:?}");
            let kind = kind.split(['(', ' ', '{']).next().unwrap_or("Numeric");
            eprintln!("error [{kind}]: {e}");
            ExitCode::from(3)
        }
    }
}
