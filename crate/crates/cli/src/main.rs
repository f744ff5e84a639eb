use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use cpsrl::diagnostics::{format_table, run_suite, CHECK_NAMES};
use cpsrl::experiment::batch::Manifest;
use cpsrl::experiment::output::read_aggregate;
use cpsrl::experiment::plot::{render_svg, Series};
use cpsrl::experiment::{parse_seeds, run_batch, AgentKind, RunConfig, ScheduleConfig};

const EXIT_CONFIG: u8 = 1;
const EXIT_RUN: u8 = 2;
const EXIT_VERIFY: u8 = 3;

#[derive(Parser)]
#[command(
    name = "cpsrl",
    version,
    about = "Continuing posterior sampling experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a TOML config.
    Run(RunArgs),
    /// Run named verification checks.
    Verify(VerifyArgs),
    /// Plot one or more aggregate.csv files on shared axes.
    Plot(PlotArgs),
}

#[derive(Args)]
struct RunArgs {
    config: PathBuf,
    /// Comma-separated list or half-open range such as 0..20.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    horizon: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    agent: Option<String>,
    /// Fixed discount; implies `--schedule fixed` unless another schedule is given.
    #[arg(long)]
    gamma: Option<f64>,
    /// fixed, horizon_tuned or doubling_trick.
    #[arg(long)]
    schedule: Option<String>,
}

#[derive(Args)]
struct VerifyArgs {
    names: Vec<String>,
    #[arg(long)]
    all: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Where to write the JSON reports.
    #[arg(long, default_value = "verify_report.json")]
    out: PathBuf,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long, default_value = "regret.svg")]
    out: PathBuf,
    #[arg(long, default_value = "cumulative regret")]
    title: String,
}

struct Failure {
    code: u8,
    error: anyhow::Error,
}

fn config_error(error: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: EXIT_CONFIG,
        error: error.into(),
    }
}

fn run_error(error: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: EXIT_RUN,
        error: error.into(),
    }
}

fn apply_overrides(config: &mut RunConfig, args: &RunArgs) -> cpsrl::Result<()> {
    if let Some(seeds) = &args.seeds {
        config.seeds = parse_seeds(seeds)?;
    }
    if let Some(horizon) = args.horizon {
        config.horizon = horizon;
    }
    if let Some(out) = &args.out {
        config.output_dir = out.clone();
    }
    if let Some(agent) = &args.agent {
        config.agent = agent.parse::<AgentKind>()?;
    }
    match (&args.schedule, args.gamma) {
        (Some(name), gamma) => config.schedule = ScheduleConfig::from_flag(name, gamma)?,
        (None, Some(gamma)) => config.schedule = ScheduleConfig::Fixed { gamma },
        (None, None) => {}
    }
    config.validate()
}

fn run(args: RunArgs) -> Result<(), Failure> {
    let mut config = RunConfig::load(&args.config)
        .with_context(|| format!("reading {}", args.config.display()))
        .map_err(config_error)?;
    apply_overrides(&mut config, &args).map_err(config_error)?;
    let result = run_batch(&config).map_err(run_error)?;
    let last = result.aggregate.last();
    println!(
        "{} seeds of {} for T={} written to {}",
        result.manifest.seeds.len(),
        result.manifest.agent,
        config.horizon,
        config.output_dir.display()
    );
    if let Some(point) = last {
        println!(
            "mean regret at T: {:.4} (se {:.4})",
            point.mean, point.stderr
        );
    }
    Ok(())
}

fn verify(args: VerifyArgs) -> Result<(), Failure> {
    let names: Vec<&str> = if args.all {
        CHECK_NAMES.to_vec()
    } else if args.names.is_empty() {
        return Err(config_error(anyhow::anyhow!(
            "name at least one check or pass --all; valid checks: {}",
            CHECK_NAMES.join(", ")
        )));
    } else {
        args.names.iter().map(String::as_str).collect()
    };
    let entries = run_suite(&names, args.seed).map_err(|e| match e {
        cpsrl::Error::UnknownCheck { .. } => config_error(e),
        other => run_error(other),
    })?;
    print!("{}", format_table(&entries));
    let json = serde_json::to_vec_pretty(&entries).map_err(run_error)?;
    std::fs::write(&args.out, json)
        .with_context(|| format!("writing {}", args.out.display()))
        .map_err(run_error)?;
    let failed: Vec<&str> = entries
        .iter()
        .filter(|e| !e.passed())
        .map(|e| e.first.name.as_str())
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_VERIFY,
            error: anyhow::anyhow!("failed checks: {}", failed.join(", ")),
        })
    }
}

/// Series label: the agent from a sibling manifest.json, else the parent
/// directory name, else the file stem.
fn series_label(path: &Path) -> String {
    let dir = path.parent().unwrap_or(Path::new(""));
    if let Ok(bytes) = std::fs::read(dir.join("manifest.json")) {
        if let Ok(manifest) = serde_json::from_slice::<Manifest>(&bytes) {
            return manifest.agent;
        }
    }
    dir.file_name()
        .or_else(|| path.file_stem())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "series".into())
}

fn plot(args: PlotArgs) -> Result<(), Failure> {
    let mut series = Vec::new();
    for input in &args.inputs {
        let points = read_aggregate(input)
            .with_context(|| format!("reading {}", input.display()))
            .map_err(config_error)?;
        series.push(Series {
            label: series_label(input),
            points,
        });
    }
    std::fs::write(&args.out, render_svg(&args.title, &series))
        .with_context(|| format!("writing {}", args.out.display()))
        .map_err(run_error)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => run(args),
        Command::Verify(args) => verify(args),
        Command::Plot(args) => plot(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {:#}", failure.error);
            ExitCode::from(failure.code)
        }
    }
}
