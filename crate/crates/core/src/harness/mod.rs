//! Configuration, the step-by-step runner, metrics output and the
//! verification suites.

pub mod config;
pub mod metrics;
pub mod runner;
pub mod verify;

pub use config::{OutputConfig, ProblemConfig, RunConfig, ScheduleConfig, SyncPolicy, VariancePolicy};
pub use metrics::{MetricsRecord, RunSummary};
pub use runner::{run_experiment, run_to_dir, RunOutcome, Simulation};
pub use verify::{verify, CheckResult, Suite, VerifyReport};
