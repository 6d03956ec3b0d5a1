use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use zeroone::harness::{run_to_dir, verify, RunConfig, Suite};
use zeroone::optimizers::AlgorithmKind;
use zeroone::schedules::predicted_volume;

#[derive(Parser)]
#[command(name = "zeroone", version, about = "Simulate communication-efficient Adam variants")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write metrics.csv and summary.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, env = "ZEROONE_OUT_DIR")]
        out: PathBuf,
    },
    /// Run the built-in verification suites and print a JSON report.
    Verify {
        /// Suites to run; all of them when omitted.
        #[arg(long = "suite", value_enum)]
        suites: Vec<SuiteArg>,
    },
    /// Inspect the schedules a config produces.
    Schedule {
        #[command(subcommand)]
        command: ScheduleCommand,
    },
    /// Print a starter config for an algorithm.
    Preset {
        #[arg(value_enum)]
        algorithm: AlgorithmArg,
        #[arg(long, default_value_t = 4)]
        workers: usize,
        #[arg(long, default_value_t = 32)]
        dim: usize,
        #[arg(long, default_value_t = 1000)]
        steps: usize,
    },
}

#[derive(Subcommand)]
enum ScheduleCommand {
    /// Print T_v, T_u and the predicted communication volume as JSON.
    Preview {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    Compression,
    Collectives,
    Equivalence,
    Bounds,
    Volume,
}

impl From<SuiteArg> for Suite {
    fn from(s: SuiteArg) -> Self {
        match s {
            SuiteArg::Compression => Suite::Compression,
            SuiteArg::Collectives => Suite::Collectives,
            SuiteArg::Equivalence => Suite::Equivalence,
            SuiteArg::Bounds => Suite::Bounds,
            SuiteArg::Volume => Suite::Volume,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgorithmArg {
    Adam,
    DistributedAdam,
    OnebitAdam,
    ZerooneAdam,
}

impl From<AlgorithmArg> for AlgorithmKind {
    fn from(a: AlgorithmArg) -> Self {
        match a {
            AlgorithmArg::Adam => AlgorithmKind::Adam,
            AlgorithmArg::DistributedAdam => AlgorithmKind::DistributedAdam,
            AlgorithmArg::OnebitAdam => AlgorithmKind::OnebitAdam,
            AlgorithmArg::ZerooneAdam => AlgorithmKind::ZerooneAdam,
        }
    }
}

fn load(path: &PathBuf) -> Result<RunConfig> {
    RunConfig::load(path).with_context(|| format!("loading {}", path.display()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

/// Returns whether every requested check passed.
fn dispatch(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run { config, out } => {
            let config = load(&config)?;
            log::info!("running {:?} for {} steps", config.algorithm.kind, config.hyper.total_steps);
            let outcome = run_to_dir(&config, &out).with_context(|| format!("writing to {}", out.display()))?;
            println!("{}", serde_json::to_string_pretty(&outcome.summary)?);
            Ok(true)
        }
        Command::Verify { suites } => {
            let suites: Vec<Suite> =
                if suites.is_empty() { Suite::ALL.to_vec() } else { suites.into_iter().map(Suite::from).collect() };
            let report = verify(&suites)?;
            for check in report.checks.iter().filter(|c| !c.passed) {
                log::warn!("{}/{} failed: measured {:e}, threshold {:e}", check.suite, check.name, check.measured, check.threshold);
            }
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(report.passed)
        }
        Command::Schedule { command: ScheduleCommand::Preview { config } } => {
            let config = load(&config)?;
            let schedules = config.build_schedules()?;
            let (d, total) = (config.hyper.dim, config.hyper.total_steps);
            let preview = json!({
                "total_steps": total,
                "t_v": schedules.t_v.steps(),
                "t_u": schedules.t_u.steps(),
                "variance_updates": schedules.variance_updates(),
                "max_variance_updates": config.hyper.max_variance_updates(),
                "max_sync_gap": schedules.max_sync_gap(),
                "predicted": if config.algorithm.kind == AlgorithmKind::Adam {
                    zeroone::schedules::VolumePrediction::zero()
                } else {
                    predicted_volume(&schedules, d, total)
                },
            });
            println!("{}", serde_json::to_string_pretty(&preview)?);
            Ok(true)
        }
        Command::Preset { algorithm, workers, dim, steps } => {
            let config = RunConfig::preset(algorithm.into(), workers, dim, steps);
            config.validate()?;
            print!("{}", config.to_toml_string()?);
            Ok(true)
        }
    }
}
