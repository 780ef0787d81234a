use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use ttpinn_core::{
    cmd_check, cmd_export_fields, cmd_sweep, cmd_train, CheckConfig, ExperimentConfig, Overrides, SweepConfig,
};

#[derive(Parser)]
#[command(name = "ttpinn", version, about = "Tensor-train PINNs for the 2-D Helmholtz benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration.
    Train(TrainArgs),
    /// Train a list of configurations and tabulate the final errors.
    Sweep(SweepArgs),
    /// Evaluate a checkpoint on a grid and write CSV and PGM fields.
    ExportFields(ExportArgs),
    /// Run the self-verification suites.
    Check(CheckArgs),
}

#[derive(Args)]
struct RunFlags {
    /// Override the sampling and initialization seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the number of optimizer steps.
    #[arg(long)]
    iterations: Option<usize>,
    /// Override the evaluation grid resolution.
    #[arg(long)]
    resolution: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunFlags {
    fn overrides(&self) -> Overrides {
        Overrides { seed: self.seed, iterations: self.iterations, resolution: self.resolution, out_dir: None }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Experiment JSON; defaults to the dense 3x256 network.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    flags: RunFlags,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// Dense networks of widths 32, 64, 128 and 256.
    Dense,
    /// Width-256 TT networks at 100x, 40x and 20x compression.
    Tt,
}

#[derive(Args)]
struct SweepArgs {
    /// Sweep JSON: `{"runs": [experiment, ...]}`.
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    config: Option<PathBuf>,
    /// Built-in list of runs.
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    #[command(flatten)]
    flags: RunFlags,
}

#[derive(Args)]
struct ExportArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 256)]
    resolution: usize,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct CheckArgs {
    /// Check-suite JSON (`seed`, `matvec_cases`, `residual_points`, `jet_points`, `corrupt_core`).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for the random test configurations.
    #[arg(long)]
    seed: Option<u64>,
}

fn train(args: &TrainArgs) -> Result<()> {
    let mut config = match &args.config {
        Some(path) => ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
        None => ExperimentConfig::default(),
    };
    config.apply(&args.flags.overrides());
    config.validate()?;
    let out = match (&args.flags.out, &config.out_dir) {
        (Some(dir), _) | (None, Some(dir)) => dir.clone(),
        (None, None) => Path::new("runs").join(&config.name),
    };
    let record = cmd_train(&config, &out, &mut std::io::stderr())?;
    println!("{}: n_theta {} mse {:e} rel_l2 {:e} -> {}", record.name, record.n_theta, record.metrics.mse, record.metrics.rel_l2, out.display());
    Ok(())
}

fn sweep(args: &SweepArgs) -> Result<()> {
    let mut sweep = match (&args.config, args.preset) {
        (Some(path), _) => SweepConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
        (None, Some(Preset::Dense)) => SweepConfig::dense_widths(),
        (None, Some(Preset::Tt)) => SweepConfig::tt_compressions(),
        (None, None) => bail!("sweep needs --config or --preset"),
    };
    for run in &mut sweep.runs {
        run.apply(&args.flags.overrides());
        run.validate()?;
    }
    let out = args.flags.out.clone().unwrap_or_else(|| PathBuf::from("runs/sweep"));
    let rows = cmd_sweep(&sweep, &out, &mut std::io::stderr())?;
    print!("{}", std::fs::read_to_string(out.join("table.csv"))?);
    let failed: Vec<&str> = rows.iter().filter(|r| r.result.is_err()).map(|r| r.name.as_str()).collect();
    if !failed.is_empty() {
        bail!("{} of {} runs failed: {}", failed.len(), rows.len(), failed.join(", "));
    }
    Ok(())
}

fn export_fields(args: &ExportArgs) -> Result<()> {
    let eval = cmd_export_fields(&args.checkpoint, args.resolution, &args.out)?;
    println!("mse {:e} rel_l2 {:e} -> {}", eval.metrics.mse, eval.metrics.rel_l2, args.out.display());
    Ok(())
}

fn check(args: &CheckArgs) -> Result<bool> {
    let mut config = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            CheckConfig::from_json(&text)?
        }
        None => CheckConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let report = cmd_check(&config);
    print!("{report}");
    Ok(report.passed())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Train(a) => train(a).map(|()| true),
        Command::Sweep(a) => sweep(a).map(|()| true),
        Command::ExportFields(a) => export_fields(a).map(|()| true),
        Command::Check(a) => check(a),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
