use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimizers::{AlgorithmConfig, AlgorithmKind};
use crate::problems::{GradientOracle, ProblemSpec};
use crate::schedules::{build_sync_schedule, build_variance_schedule, LrSchedule, ScheduleSet, StepSet};
use crate::state::HyperParams;

/// Policy for the sync steps `T_u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SyncPolicy {
    /// Interval 1 for `warmup` steps, then doubling every `period` steps up to `clip`.
    Doubling { warmup: usize, period: usize, clip: usize },
    EveryStep,
}

/// Policy for the variance-update steps `T_v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum VariancePolicy {
    /// Gaps `2^⌊j/κ⌋`; with `couple_to_sync`, updates stop wherever the sync
    /// interval exceeds one.
    Doubling {
        kappa: usize,
        #[serde(default = "default_true")]
        couple_to_sync: bool,
    },
    EveryStep,
    /// The first `steps` steps.
    Prefix { steps: usize },
    Never,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub sync: SyncPolicy,
    pub variance: VariancePolicy,
    pub lr: LrSchedule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemConfig {
    #[serde(flatten)]
    pub spec: ProblemSpec,
    /// Gradient noise level; `E‖noise‖² = sigma²`.
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_metrics")]
    pub metrics: String,
    #[serde(default = "default_summary")]
    pub summary: String,
    /// Window for the trailing gradient-norm average in the summary.
    #[serde(default = "default_last_k")]
    pub last_k: usize,
}

fn default_metrics() -> String {
    "metrics.csv".into()
}

fn default_summary() -> String {
    "summary.json".into()
}

fn default_last_k() -> usize {
    100
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { metrics: default_metrics(), summary: default_summary(), last_k: default_last_k() }
    }
}

/// A complete, self-contained experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub algorithm: AlgorithmConfig,
    pub hyper: HyperParams,
    pub schedule: ScheduleConfig,
    pub problem: ProblemConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl RunConfig {
    /// A ready-to-run configuration on a noisy quadratic with the usual
    /// schedule for each algorithm.
    pub fn preset(kind: AlgorithmKind, n_workers: usize, dim: usize, total_steps: usize) -> Self {
        let (sync, variance) = match kind {
            AlgorithmKind::Adam | AlgorithmKind::DistributedAdam => (SyncPolicy::EveryStep, VariancePolicy::EveryStep),
            AlgorithmKind::OnebitAdam => {
                (SyncPolicy::EveryStep, VariancePolicy::Prefix { steps: (total_steps / 8).max(1) })
            }
            AlgorithmKind::ZerooneAdam => (
                SyncPolicy::Doubling { warmup: total_steps / 10, period: total_steps / 10 + 1, clip: 16 },
                VariancePolicy::Doubling { kappa: 4, couple_to_sync: true },
            ),
        };
        Self {
            seed: 0,
            algorithm: AlgorithmConfig::new(kind),
            hyper: HyperParams::new(n_workers, dim, total_steps),
            schedule: ScheduleConfig { sync, variance, lr: LrSchedule::Constant { lr: 1e-2 } },
            problem: ProblemConfig {
                spec: ProblemSpec::Quadratic { mu: 0.1, l: 1.0, target_scale: 1.0 },
                sigma: 0.1,
            },
            output: OutputConfig::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        self.schedule.lr.validate()?;
        if self.output.last_k == 0 {
            return Err(Error::InvalidConfig("output.last_k must be positive".into()));
        }
        let schedules = self.build_schedules()?;
        self.algorithm.validate(&schedules)?;
        let variance = &self.schedule.variance;
        match self.algorithm.kind {
            AlgorithmKind::Adam | AlgorithmKind::DistributedAdam if *variance != VariancePolicy::EveryStep => {
                Err(Error::InvalidConfig(format!("{:?} needs variance = every_step", self.algorithm.kind)))
            }
            AlgorithmKind::OnebitAdam if !matches!(variance, VariancePolicy::Prefix { .. }) => {
                Err(Error::InvalidConfig("onebit_adam needs variance = prefix".into()))
            }
            _ => Ok(()),
        }
    }

    /// `T_v`, `T_u` and the learning rate for this run.
    ///
    /// The framework algorithms communicate every step: a full-precision
    /// round on `T_v` and a one-bit round on its complement, so their `T_u`
    /// is the complement of `T_v` and the sync policy is not consulted.
    /// Sequential Adam never communicates.
    pub fn build_schedules(&self) -> Result<ScheduleSet> {
        let total = self.hyper.total_steps;
        let sync = match &self.schedule.sync {
            SyncPolicy::Doubling { warmup, period, clip } => build_sync_schedule(*warmup, *period, *clip, total)?,
            SyncPolicy::EveryStep => StepSet::all(total),
        };
        let t_v = match &self.schedule.variance {
            VariancePolicy::Doubling { kappa, couple_to_sync } => {
                build_variance_schedule(*kappa, total, couple_to_sync.then_some(&sync))?
            }
            VariancePolicy::EveryStep => StepSet::all(total),
            VariancePolicy::Prefix { steps } => StepSet::prefix((*steps).min(total), total),
            VariancePolicy::Never => StepSet::empty(total),
        };
        let t_u = match self.algorithm.kind {
            AlgorithmKind::Adam => StepSet::empty(total),
            AlgorithmKind::DistributedAdam | AlgorithmKind::OnebitAdam => t_v.complement(),
            AlgorithmKind::ZerooneAdam => sync,
        };
        ScheduleSet::new(t_v, t_u, self.schedule.lr.clone())
    }

    pub fn build_oracle(&self) -> Result<GradientOracle> {
        Ok(GradientOracle::from_spec(
            &self.problem.spec,
            self.hyper.dim,
            self.hyper.n_workers,
            self.problem.sigma,
            self.seed,
        )?
        .with_clip(self.hyper.g_inf_clip))
    }
}
