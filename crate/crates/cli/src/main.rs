//! `rfmsim`: run refresh-management timing experiments from a config file.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use rfm_sim::experiment::{run_experiment, ExperimentConfig, ExperimentKind, ExperimentOutput, ExperimentResult};
use rfm_sim::Error;

#[derive(Debug, Parser)]
#[command(name = "rfmsim", version, about = "DDR5 refresh-management timing simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one experiment.
    Run(Common),
    /// Run every point of a `kind = "sweep"` config's grid.
    Sweep(Common),
    /// Compare analytical and simulated nRFM.
    ValidateModel(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// TOML config, or a `report.json` whose echoed config is rerun.
    #[arg(short, long)]
    config: PathBuf,
    #[arg(short, long, default_value = "out")]
    out_dir: PathBuf,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Also write command traces.
    #[arg(long)]
    trace: bool,
}

const EXIT_FAILURE: u8 = 1;
const EXIT_PARSE: u8 = 2;
const EXIT_INVALID: u8 = 3;
const EXIT_SYNC: u8 = 4;

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::ConfigParse(_)) => EXIT_PARSE,
        Some(
            Error::InvalidConfig { .. }
            | Error::AddressOutOfRange { .. }
            | Error::Infeasible(_)
            | Error::Measurement(_),
        ) => EXIT_INVALID,
        Some(Error::Sync(_) | Error::Calibration(_)) => EXIT_SYNC,
        _ => EXIT_FAILURE,
    }
}

fn load(args: &Common) -> anyhow::Result<ExperimentConfig> {
    let text_err = |e: Error| match e {
        Error::Io(io) => anyhow::Error::new(io).context(format!("reading {}", args.config.display())),
        e => anyhow::Error::new(e),
    };
    let mut cfg = ExperimentConfig::load(&args.config).map_err(text_err)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn summary(out: &ExperimentOutput) -> String {
    match &out.report.result {
        ExperimentResult::Channel(r) => format!(
            "{}/{} bits correct (accuracy {:.4}), raw bandwidth {:.1} KB/s",
            r.bits_correct, r.bits_sent, r.accuracy, r.raw_bandwidth_kib_per_s
        ),
        ExperimentResult::Dos(r) => {
            let slow: Vec<String> = r.victims.iter().map(|v| format!("{:.4}", v.slowdown)).collect();
            format!(
                "nRFM {:.4} (model {:.4}), victim slowdown [{}]",
                r.simulated_nrfm,
                r.analytical_nrfm,
                slow.join(", ")
            )
        }
        ExperimentResult::Model { rows } => rows
            .iter()
            .map(|r| {
                format!(
                    "raaimt {}: model {:.4}, simulated {:.4}, error {:+.2}%",
                    r.raaimt,
                    r.analytical_nrfm,
                    r.simulated_nrfm,
                    100.0 * r.relative_error
                )
            })
            .collect::<Vec<_>>()
            .join("\n"),
        ExperimentResult::Sweep { points, failed } => format!("{points} grid points, {failed} without a measurement"),
    }
}

fn execute(cfg: ExperimentConfig, args: &Common) -> anyhow::Result<()> {
    let start = Instant::now();
    let out = run_experiment(cfg)?;
    let elapsed = start.elapsed().as_secs_f64();
    let written = out
        .write(&args.out_dir, args.trace)
        .with_context(|| format!("writing outputs to {}", args.out_dir.display()))?;
    write_runtime(&args.out_dir, elapsed)?;
    println!("{}", summary(&out));
    for p in written {
        eprintln!("wrote {}", p.display());
    }
    eprintln!("wall clock {elapsed:.3} s");
    Ok(())
}

/// Kept next to the report, not in it, so reports stay byte-identical.
fn write_runtime(dir: &Path, secs: f64) -> anyhow::Result<()> {
    let path = dir.join("runtime.json");
    std::fs::write(&path, format!("{{\"wall_clock_s\": {secs:.6}}}\n"))
        .with_context(|| format!("writing {}", path.display()))
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run(args) => {
            let cfg = load(&args)?;
            execute(cfg, &args)
        }
        Command::Sweep(args) => {
            let cfg = load(&args)?;
            if cfg.kind != ExperimentKind::Sweep {
                bail!(Error::InvalidConfig {
                    field: "kind".into(),
                    reason: format!("`sweep` needs kind = \"sweep\", found \"{}\"", cfg.kind.as_str()),
                });
            }
            execute(cfg, &args)
        }
        Command::ValidateModel(args) => {
            let mut cfg = load(&args)?;
            cfg.kind = ExperimentKind::ValidateModel;
            execute(cfg, &args)
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
