//! Command-line driver: verification suite, scaling sweeps, closed-loop
//! simulation and plot-script generation.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use fewha::bench::{bench_csv, run_sweep, summarize, SweepParam, SweepSpec};
use fewha::sim::{quality_csv, run_closed_loop, SimSeeds};
use fewha::verify::{run_verification, Fault, VerifyOptions};
use fewha::{presets, SystemGeometry};

pub mod plot;

#[derive(Debug, Parser)]
#[command(
    name = "fewha",
    version,
    about = "Wavelet tomography reconstructor: verify, bench, simulate, plot"
)]
pub struct Cli {
    /// JSON configuration file, or one of the built-in presets `mini` and `maory`.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Reconstructor parallelism degree (default max(L, W)).
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Output file (report, CSV or script depending on the subcommand).
    #[arg(long, global = true, value_name = "PATH")]
    pub output: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Dense-oracle, adjoint and SPD checks.
    Verify(VerifyArgs),
    /// Per-step timing sweep, written as CSV.
    Bench(BenchArgs),
    /// Closed-loop run, quality series written as CSV.
    Simulate(SimulateArgs),
    /// Emit a matplotlib script for a bench or quality CSV.
    Plot(PlotArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FaultArg {
    ShAdjoint,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Largest coefficient dimension for dense assembly.
    #[arg(long, default_value_t = fewha::oracle::DEFAULT_ORACLE_CAP)]
    pub oracle_cap: usize,
    /// Random trials per adjoint identity.
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    /// Random trials for the symmetry and positivity of M.
    #[arg(long, default_value_t = 100)]
    pub spd_trials: usize,
    #[arg(long, hide = true)]
    pub inject_fault: Option<FaultArg>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// layers, pcg_iters, subapertures or threads.
    #[arg(long, value_parser = parse_param)]
    pub sweep: SweepParam,
    /// Comma-separated sweep values.
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    pub reps: usize,
    /// Untimed steps before each repetition.
    #[arg(long, default_value_t = 10)]
    pub warmup: usize,
    /// Timed steps per repetition.
    #[arg(long, default_value_t = 10)]
    pub steps: usize,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 20)]
    pub steps: usize,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// Bench or quality CSV.
    pub csv: PathBuf,
}

fn parse_param(s: &str) -> Result<SweepParam, String> {
    s.parse().map_err(|e: fewha::Error| e.to_string())
}

/// Failure classes with their process exit codes.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("verification failed: {0}")]
    Verification(String),
    #[error("configuration error: {0:#}")]
    Config(anyhow::Error),
    #[error("{0:#}")]
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Verification(_) | Self::Runtime(_) => 1,
            Self::Config(_) => 2,
        }
    }
}

fn classify(e: fewha::Error) -> CliError {
    use fewha::Error as E;
    match e {
        E::Io { .. } | E::Parse(_) | E::Validation(_) | E::Sweep(_) | E::OracleTooLarge { .. } => {
            CliError::Config(e.into())
        }
        other => CliError::Runtime(other.into()),
    }
}

fn runtime(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Runtime(e.into())
}

/// Reads `--config`: a file path, or a preset name when no such file exists.
/// Without the flag the `mini` preset is used.
pub fn load_geometry(config: Option<&Path>) -> Result<SystemGeometry, CliError> {
    let Some(path) = config else {
        return Ok(presets::mini());
    };
    if !path.exists() {
        match path.to_str() {
            Some("mini") => return Ok(presets::mini()),
            Some("maory") => return Ok(presets::maory()),
            _ => {}
        }
    }
    fewha::load_config(path).map_err(classify)
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(CliError::Runtime)
}

/// Runs one command, writing the human-readable summary to `out`.
pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match &cli.command {
        Command::Verify(args) => cmd_verify(cli, args, out),
        Command::Bench(args) => cmd_bench(cli, args, out),
        Command::Simulate(args) => cmd_simulate(cli, args, out),
        Command::Plot(args) => cmd_plot(cli, args, out),
    }
}

pub fn cmd_verify(cli: &Cli, args: &VerifyArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let geometry = load_geometry(cli.config.as_deref())?;
    let options = VerifyOptions {
        oracle_cap: args.oracle_cap,
        adjoint_trials: args.trials,
        spd_trials: args.spd_trials,
        seed: cli.seed,
        threads: cli.threads,
        fault: args.inject_fault.map(|FaultArg::ShAdjoint| Fault::ShAdjoint),
    };
    let report = run_verification(&geometry, &options).map_err(classify)?;
    writeln!(out, "{report}").map_err(runtime)?;
    if let Some(path) = &cli.output {
        write_file(path, &format!("{report}\n"))?;
    }
    if report.passed() {
        Ok(())
    } else {
        let names: Vec<&str> = report.failures().map(|c| c.name.as_str()).collect();
        Err(CliError::Verification(names.join(", ")))
    }
}

pub fn cmd_bench(cli: &Cli, args: &BenchArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let geometry = load_geometry(cli.config.as_deref())?;
    let spec = SweepSpec {
        param: args.sweep,
        values: args.values.clone(),
        repetitions: args.reps,
        warmup: args.warmup,
        steps: args.steps,
    };
    spec.validate(&geometry).map_err(classify)?;
    let rows = run_sweep(&geometry, &spec, cli.threads, cli.seed).map_err(classify)?;
    let path = cli.output.clone().unwrap_or_else(|| PathBuf::from("bench.csv"));
    write_file(&path, &bench_csv(&rows))?;
    writeln!(out, "{:>14} {:>14} {:>10}", spec.param.name(), "median [us]", "spread").map_err(runtime)?;
    for s in summarize(&rows) {
        writeln!(
            out,
            "{:>14} {:>14.1} {:>9.1}%",
            s.value,
            s.median_us,
            100.0 * s.spread()
        )
        .map_err(runtime)?;
    }
    writeln!(out, "wrote {}", path.display()).map_err(runtime)?;
    Ok(())
}

pub fn cmd_simulate(cli: &Cli, args: &SimulateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let geometry = load_geometry(cli.config.as_deref())?;
    let run = run_closed_loop(&geometry, args.steps, SimSeeds::from_base(cli.seed), cli.threads).map_err(classify)?;
    let path = cli.output.clone().unwrap_or_else(|| PathBuf::from("quality.csv"));
    write_file(&path, &quality_csv(&run.records))?;
    writeln!(out, "final field RMS     {:.6e}", run.final_rms()).map_err(runtime)?;
    writeln!(out, "uncorrected RMS     {:.6e}", run.uncorrected_rms).map_err(runtime)?;
    writeln!(out, "improvement factor  {:.6}", run.improvement()).map_err(runtime)?;
    writeln!(out, "wrote {}", path.display()).map_err(runtime)?;
    Ok(())
}

pub fn cmd_plot(cli: &Cli, args: &PlotArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let text = fs::read_to_string(&args.csv)
        .with_context(|| format!("reading {}", args.csv.display()))
        .map_err(CliError::Config)?;
    let script = plot::plot_script(&text).map_err(|e| CliError::Config(e.into()))?;
    let path = cli.output.clone().unwrap_or_else(|| args.csv.with_extension("py"));
    write_file(&path, &script)?;
    writeln!(out, "wrote {}", path.display()).map_err(runtime)?;
    Ok(())
}
