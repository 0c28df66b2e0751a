use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dualsched_cli::{
    run_ablate, run_edit, run_irreversibility, run_reconstruct, write_csv, write_edited, Axis, CliError,
    ExperimentConfig,
};

#[derive(Parser)]
#[command(name = "dsinv", version, about = "Dual-schedule inversion experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// CSV destination; overrides outputs.csv. Without either, CSV goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    Tau,
    Steps,
}

#[derive(Subcommand)]
enum Command {
    /// DDIM and dual round trips per sample and guidance scale.
    Reconstruct(Common),
    /// Dual round trips across auxiliary offsets or step counts.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Overrides ablation.axis.
        #[arg(long, value_enum)]
        axis: Option<AxisArg>,
    },
    /// DDIM round-trip gap against the dual grid gap.
    Irreversibility(Common),
    /// Invert under the source condition, sample under the target.
    Edit(Common),
}

fn load(common: &Common) -> Result<(ExperimentConfig, Option<PathBuf>), CliError> {
    let config = ExperimentConfig::read(&common.config)?;
    let out = common.out.clone().or_else(|| config.outputs.csv.clone());
    if let Some(path) = &common.out {
        check_out(path)?;
    }
    Ok((config, out))
}

fn check_out(path: &Path) -> Result<(), CliError> {
    let parent = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    if parent.is_dir() && !path.is_dir() {
        Ok(())
    } else {
        Err(CliError::Config(format!("cannot write to {}", path.display())))
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Reconstruct(common) => {
            let (config, out) = load(&common)?;
            write_csv(&run_reconstruct(&config)?, out.as_deref())
        }
        Command::Irreversibility(common) => {
            let (config, out) = load(&common)?;
            write_csv(&run_irreversibility(&config)?, out.as_deref())
        }
        Command::Ablate { common, axis } => {
            let (config, out) = load(&common)?;
            let axis = axis.map(|a| match a {
                AxisArg::Tau => Axis::Tau,
                AxisArg::Steps => Axis::Steps,
            });
            let rows = run_ablate(&config, axis)?;
            write_csv(&rows, out.as_deref())?;
            let failed: Vec<String> = rows
                .iter()
                .filter(|r| !r.passed)
                .map(|r| {
                    format!(
                        "{}={} w={} gap={:e}",
                        r.axis, r.value, r.guidance_scale, r.grid_gap_relative_max
                    )
                })
                .collect();
            if failed.is_empty() {
                Ok(())
            } else {
                Err(CliError::Acceptance(format!(
                    "grid gap above {:e}: {}",
                    config.ablation.tolerance,
                    failed.join(", ")
                )))
            }
        }
        Command::Edit(common) => {
            let (config, out) = load(&common)?;
            let report = run_edit(&config)?;
            write_csv(&report.rows, out.as_deref())?;
            let edited = config
                .outputs
                .edited
                .clone()
                .or_else(|| out.as_ref().map(|p| p.with_extension("edited.json")));
            match edited {
                Some(path) => write_edited(&report.edited, &path),
                None => Ok(()),
            }
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dsinv: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
