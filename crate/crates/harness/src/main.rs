//! `ginger`: run experiments, verify the implementation, benchmark scaling.
//!
//! Exit status: 0 success, 1 usage or configuration error, 2 a verification
//! check failed, 3 a training run aborted on a numerical error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ginger_core::Exec;
use ginger_harness::bench::{bench_scaling, format_table, parse_dim, write_csv};
use ginger_harness::config::{ExperimentConfig, OUTPUT_ENV};
use ginger_harness::run::run_experiment;
use ginger_harness::verify::run_checks;
use ginger_harness::{HarnessError, Result};

#[derive(Debug, Parser)]
#[command(name = "ginger", version, about = "Low-rank natural gradient experiments")]
struct Cli {
    /// Use this single seed instead of the configured ones.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for independent runs.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory; overrides GINGER_OUT and the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train every optimizer and seed in a TOML config.
    Run { config: PathBuf },
    /// Run the numerical checks; `--filter` keeps checks whose name contains it.
    Verify {
        #[arg(long)]
        filter: Option<String>,
    },
    /// Time one update plus direction query per dimension.
    Bench {
        #[arg(long, value_delimiter = ',', value_parser = parse_dim, default_value = "1e3,1e4,1e5")]
        dims: Vec<usize>,
        #[arg(long, default_value_t = 8)]
        tau: usize,
        #[arg(long, default_value_t = 20)]
        reps: usize,
        /// Use the single-threaded kernels.
        #[arg(long)]
        sequential: bool,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

/// `--out`, else `GINGER_OUT`, else nothing.
fn output_override(out: &Option<PathBuf>) -> Option<PathBuf> {
    out.clone()
        .or_else(|| std::env::var_os(OUTPUT_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
}

fn dispatch(cli: Cli) -> Result<()> {
    let out = output_override(&cli.out);
    match cli.command {
        Command::Run { config } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(dir) = out {
                cfg.output_dir = dir;
            }
            if let Some(seed) = cli.seed {
                cfg.seed = Some(seed);
                cfg.seeds = None;
            }
            let jobs = cli
                .jobs
                .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
            let report = run_experiment(&cfg, jobs)?;
            println!(
                "{} runs written to {}",
                report.rows.len(),
                report.output_dir.display()
            );
            Ok(())
        }
        Command::Verify { filter } => {
            let outcomes = run_checks(filter.as_deref(), |o| println!("{o}"));
            if outcomes.is_empty() {
                return Err(HarnessError::Config(format!(
                    "no check matches filter {:?}",
                    filter.unwrap_or_default()
                )));
            }
            if let Some(dir) = out {
                write_json(&dir, "verify.json", &outcomes)?;
            }
            let failed = outcomes.iter().filter(|o| !o.passed).count();
            if failed > 0 {
                return Err(HarnessError::VerificationFailed {
                    failed,
                    total: outcomes.len(),
                });
            }
            Ok(())
        }
        Command::Bench {
            dims,
            tau,
            reps,
            sequential,
        } => {
            let exec = if sequential { Exec::Sequential } else { Exec::Parallel };
            let points: Vec<(usize, usize)> = dims.iter().map(|&d| (d, tau)).collect();
            let rows = bench_scaling(&points, reps, exec, cli.seed.unwrap_or(0))?;
            print!("{}", format_table(&rows));
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir).map_err(|source| HarnessError::Io {
                    path: dir.clone(),
                    source,
                })?;
                write_csv(&dir.join("bench.csv"), &rows)?;
                write_json(&dir, "bench.json", &rows)?;
            }
            Ok(())
        }
    }
}

fn write_json<T: serde::Serialize + ?Sized>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let path = dir.join(name);
    let io = |source| HarnessError::Io {
        path: path.clone(),
        source,
    };
    std::fs::create_dir_all(dir).map_err(io)?;
    std::fs::write(&path, serde_json::to_string_pretty(value)?).map_err(io)
}
