//! `dynhaz` command-line front end.
//!
//! Exit codes: 0 on success, 1 on runtime failure, 2 on invalid configuration.
//! Failures are reported on stderr as one JSON object.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use commands::{Failure, Run};
use config::{Command, RunConfig};

#[derive(Parser)]
#[command(name = "dynhaz", version, about = "Dynamic likelihood hazard estimation")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Hazard curve on a grid.
    Estimate(Flags),
    /// Goodness-of-fit window selection at each grid point.
    GofScan(Flags),
    /// Monte Carlo experiment; per-cell bias, variance and MSE.
    Simulate(Flags),
    /// Monte Carlo experiment; integrated MSE ranking and paired comparisons.
    Compare(Flags),
    /// Bandwidth plan evaluated on a grid.
    Bandwidth(Flags),
}

#[derive(Args, Debug)]
struct Flags {
    /// JSON run config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// CSV with `time` and `status` columns.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Sample size when the config supplies a simulation law.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    horizon: Option<f64>,
    /// constant, gompertz, weibull or frailty.
    #[arg(long)]
    family: Option<String>,
    /// uniform, epanechnikov, biweight or triweight.
    #[arg(long)]
    kernel: Option<String>,
    /// fixed:<h>, adaptive:<c>, plugin or gof.
    #[arg(long, allow_hyphen_values = true)]
    bandwidth: Option<String>,
    /// Explicit grid points, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    grid: Option<Vec<f64>>,
    /// Equally spaced grid on [0, T].
    #[arg(long)]
    grid_points: Option<usize>,
    /// Output path; stdout when absent.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// 0.10 or 0.05.
    #[arg(long, allow_hyphen_values = true)]
    level: Option<f64>,
    /// ks_multi, ks_const, ks_1p, cvm or l1.
    #[arg(long)]
    statistic: Option<String>,
    #[arg(long)]
    min_events: Option<usize>,
    /// truncate, half-width or gof.
    #[arg(long)]
    boundary: Option<String>,
    #[arg(long)]
    threads: Option<usize>,
}

impl Flags {
    fn to_config(&self) -> RunConfig {
        RunConfig {
            input: self.input.clone(),
            n: self.n,
            horizon: self.horizon,
            family: self.family.clone(),
            kernel: self.kernel.clone(),
            bandwidth: self.bandwidth.clone(),
            grid: self.grid.clone(),
            grid_points: self.grid_points,
            output: self.output.clone(),
            seed: self.seed,
            level: self.level,
            statistic: self.statistic.clone(),
            min_events: self.min_events,
            boundary: self.boundary.clone(),
            threads: self.threads,
            ..RunConfig::default()
        }
    }
}

fn report(failure: &Failure) -> ExitCode {
    let (record, code) = match failure {
        Failure::Validation(v) => (json!({ "status": "error", "kind": "validation", "violations": v }), 2),
        Failure::Runtime(m) => (json!({ "status": "error", "kind": "runtime", "message": m }), 1),
    };
    eprintln!("{record}");
    ExitCode::from(code)
}

fn load_file(path: &PathBuf) -> Result<RunConfig, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Validation(vec![format!("config `{}`: {e}", path.display())]))?;
    serde_json::from_str(&text)
        .map_err(|e| Failure::Validation(vec![format!("config `{}`: {e}", path.display())]))
}

fn run(command: Command, flags: &Flags) -> Result<(), Failure> {
    let file = flags.config.as_ref().map(load_file).transpose()?;
    let flag_cfg = flags.to_config();
    let cfg = RunConfig::merged(file.as_ref().unwrap_or(&RunConfig::default()), &flag_cfg);
    let violations = cfg.validate(command);
    if !violations.is_empty() {
        return Err(Failure::Validation(violations));
    }
    if let Some(k) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| Failure::Runtime(e.to_string()))?;
    }
    let run = Run {
        command,
        config: &cfg,
        flags: &flag_cfg,
        file: file.as_ref(),
    };
    for artifact in run.execute()? {
        output::write_atomic(artifact.path.as_deref(), &artifact.bytes)
            .map_err(|e| Failure::Runtime(format!("writing output: {e}")))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let first = e.to_string().lines().next().unwrap_or_default().to_string();
            return report(&Failure::Validation(vec![first.trim_start_matches("error: ").into()]));
        }
    };
    let (command, flags) = match &cli.command {
        Sub::Estimate(f) => (Command::Estimate, f),
        Sub::GofScan(f) => (Command::GofScan, f),
        Sub::Simulate(f) => (Command::Simulate, f),
        Sub::Compare(f) => (Command::Compare, f),
        Sub::Bandwidth(f) => (Command::Bandwidth, f),
    };
    match run(command, flags) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => report(&f),
    }
}
