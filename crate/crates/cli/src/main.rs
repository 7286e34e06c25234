use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use ipsw_core::montecarlo::restrict_scenarios;
use ipsw_core::study::SWEEP_SCALES;
use ipsw_core::{load_config, run_balance, run_study, to_toml, RunOptions, StudyConfig};

/// Simulates how the choice of target population drives bias in IPSW
/// estimates of the population average treatment effect.
#[derive(Parser, Debug)]
#[command(name = "ipsw-sim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the Monte Carlo study and write every output table.
    Run(RunArgs),
    /// Write only the balance, Love-plot and population tables.
    Balance(BalanceArgs),
    /// Print the fully resolved configuration as TOML.
    ResolveConfig(StudyArgs),
}

#[derive(Args, Debug)]
struct StudyArgs {
    /// TOML configuration file; the built-in study is used when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override the number of replications.
    #[arg(long)]
    reps: Option<usize>,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Keep only this scenario (repeatable).
    #[arg(long = "scenario", value_name = "NAME")]
    scenarios: Vec<String>,
    /// Use this effect scale (repeatable); replaces the configured list.
    #[arg(
        long = "scale",
        value_name = "K",
        conflicts_with = "sweep",
        allow_negative_numbers = true
    )]
    scales: Vec<f64>,
    /// Use the sensitivity grid 0.5, 1.0, 1.5, 2.0, 2.5.
    #[arg(long)]
    sweep: bool,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    study: StudyArgs,
    /// Output directory.
    #[arg(long, short)]
    out: PathBuf,
    /// Worker threads.
    #[arg(long, env = "IPSW_SIM_WORKERS")]
    workers: Option<usize>,
    /// Also write per-fit solver and weight diagnostics.
    #[arg(long)]
    diagnostics: bool,
    /// Suppress progress and summary messages.
    #[arg(long, short)]
    quiet: bool,
}

#[derive(Args, Debug)]
struct BalanceArgs {
    #[command(flatten)]
    study: StudyArgs,
    /// Output directory.
    #[arg(long, short)]
    out: PathBuf,
}

fn resolve(args: &StudyArgs) -> Result<StudyConfig, ipsw_core::Error> {
    let mut config = match &args.config {
        Some(path) => load_config(path)?,
        None => StudyConfig::default(),
    };
    if let Some(reps) = args.reps {
        config.replications = reps;
    }
    if let Some(seed) = args.seed {
        config.master_seed = seed;
    }
    if !args.scenarios.is_empty() {
        config = restrict_scenarios(&config, &args.scenarios)?;
    }
    if args.sweep {
        config.effect_scales = SWEEP_SCALES.to_vec();
    } else if !args.scales.is_empty() {
        config.effect_scales = args.scales.clone();
    }
    config.plan()?;
    Ok(config)
}

fn report_written(out: &Path, files: usize, warnings: &[String], quiet: bool) {
    for w in warnings {
        eprintln!("warning: {w}");
    }
    if !quiet {
        eprintln!("wrote {} files and manifest.json to {}", files, out.display());
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(args) => {
            let config = resolve(&args.study)?;
            let total = config.replications;
            let step = (total / 10).max(1);
            let progress: Option<Arc<dyn Fn(usize) + Send + Sync>> = if args.quiet {
                None
            } else {
                Some(Arc::new(move |done: usize| {
                    if done.is_multiple_of(step) || done == total {
                        eprintln!("replication {done}/{total}");
                    }
                }))
            };
            let mut opts = RunOptions {
                diagnostics: args.diagnostics,
                progress,
                ..RunOptions::default()
            };
            if let Some(w) = args.workers {
                opts.workers = w.max(1);
            }
            let manifest = run_study(&config, &opts, &args.out)
                .with_context(|| format!("study run into {} failed", args.out.display()))?;
            report_written(&args.out, manifest.files.len(), &manifest.warnings, args.quiet);
        }
        Command::Balance(args) => {
            let config = resolve(&args.study)?;
            let manifest = run_balance(&config, &args.out)
                .with_context(|| format!("balance tables into {} failed", args.out.display()))?;
            report_written(&args.out, manifest.files.len(), &manifest.warnings, false);
        }
        Command::ResolveConfig(args) => {
            print!("{}", to_toml(&resolve(&args)?));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let code = err
                .downcast_ref::<ipsw_core::Error>()
                .map_or(1, ipsw_core::Error::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
