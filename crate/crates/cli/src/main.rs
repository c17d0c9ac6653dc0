//! `balancekit`: counterfactual-mean estimation, propensity balance checks and
//! Monte Carlo studies driven by JSON config files.
//!
//! Exit codes: 0 success (or balanced), 1 config or input error, 2 numeric
//! failure, 3 balance rejection.

mod config;
mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use balancekit::pipeline::{run_analysis, OracleNuisances};
use balancekit::sim::{replications_csv, run_monte_carlo};
use balancekit::Dataset;
use clap::{Args, Parser, Subcommand};

use config::{load, relative_to, RunConfig, SimulateConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Core(#[from] balancekit::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if e.is_numeric() => 2,
            _ => 1,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "balancekit",
    version,
    about = "Counterfactual means with score-based balance diagnostics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON config file.
    #[arg(long)]
    config: PathBuf,
    /// Directory for reports (created if missing).
    #[arg(long)]
    output: Option<PathBuf>,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Do not print the text report.
    #[arg(long)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate counterfactual means or the ATE.
    Estimate(Common),
    /// Score-test the fitted propensity against a family of directions.
    Balance(Common),
    /// Run a Monte Carlo study.
    Simulate(Common),
}

fn output_dir(common: &Common, configured: Option<&PathBuf>) -> PathBuf {
    match (&common.output, configured) {
        (Some(dir), _) => dir.clone(),
        (None, Some(dir)) => relative_to(&common.config, dir),
        (None, None) => PathBuf::from("."),
    }
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Input(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(name);
    std::fs::write(&path, contents)
        .map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("reports serialize");
    s.push('\n');
    s
}

fn load_data(common: &Common, cfg: &RunConfig) -> Result<Dataset, CliError> {
    let path = relative_to(&common.config, &cfg.input);
    Ok(Dataset::load_csv(&path, &cfg.treatment, &cfg.response)?)
}

fn run_estimate(common: &Common) -> Result<u8, CliError> {
    let cfg: RunConfig = load(&common.config)?;
    let seed = common.seed.unwrap_or(cfg.seed);
    let data = load_data(common, &cfg)?;
    let analysis = run_analysis(
        &data,
        &cfg.analysis(false),
        seed,
        &OracleNuisances::default(),
    )?;
    let report = report::estimate_report(&analysis, seed);
    let dir = output_dir(common, cfg.output.as_ref());
    let text = report::estimate_text(&report);
    write(&dir, "estimate.json", &to_json(&report))?;
    write(&dir, "estimate.txt", &text)?;
    write(
        &dir,
        "estimate_plot.csv",
        &report::estimate_plot_csv(&report),
    )?;
    if !common.quiet {
        print!("{text}");
    }
    Ok(0)
}

fn run_balance(common: &Common) -> Result<u8, CliError> {
    let cfg: RunConfig = load(&common.config)?;
    let seed = common.seed.unwrap_or(cfg.seed);
    let data = load_data(common, &cfg)?;
    let analysis = run_analysis(
        &data,
        &cfg.analysis(true),
        seed,
        &OracleNuisances::default(),
    )?;
    let balance = analysis.balance.as_ref().expect("balance requested");
    let file = report::BalanceFile {
        schema_version: report::SCHEMA_VERSION,
        report: "balance",
        seed,
        data: report::data_summary(&analysis),
        propensity: report::propensity_summary(&analysis),
        balance,
    };
    let dir = output_dir(common, cfg.output.as_ref());
    let text = balance.to_text();
    write(&dir, "balance.json", &to_json(&file))?;
    write(&dir, "balance.txt", &text)?;
    write(&dir, "balance_plot.csv", &report::balance_plot_csv(balance))?;
    if !common.quiet {
        print!("{text}");
    }
    Ok(if balance.is_balanced() { 0 } else { 3 })
}

fn run_simulate(common: &Common) -> Result<u8, CliError> {
    let mut cfg: SimulateConfig = load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    let result = run_monte_carlo(&cfg.monte_carlo())?;
    let dir = output_dir(common, cfg.output.as_ref());
    let file = report::SimulateReport {
        schema_version: report::SCHEMA_VERSION,
        report: "simulate",
        result: &result,
    };
    let text = report::simulate_text(&result);
    write(&dir, "simulate.json", &to_json(&file))?;
    write(&dir, "simulate.txt", &text)?;
    write(&dir, "replications.csv", &replications_csv(&result)?)?;
    if !common.quiet {
        print!("{text}");
    }
    Ok(0)
}

fn main() -> ExitCode {
    // usage errors are config errors (exit 1), not clap's default 2
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match &cli.command {
        Command::Estimate(c) => run_estimate(c),
        Command::Balance(c) => run_balance(c),
        Command::Simulate(c) => run_simulate(c),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
