use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use rayon::prelude::*;

use crate::collectives::Collectives;
use crate::error::{Error, Result};
use crate::harness::config::RunConfig;
use crate::harness::metrics::{mean_last_k, write_csv, MetricsRecord, RunSummary};
use crate::optimizers::{
    adam_baseline_step, framework_step, zeroone_adam_step, AlgorithmKind, Diagnostic, StepReport,
};
use crate::problems::GradientOracle;
use crate::schedules::{predicted_volume, ScheduleSet, VolumePrediction};
use crate::state::{SharedOptState, WorkerState};
use crate::vector::{mean, ParamVector};

/// Below this many gradient coordinates per step, threads cost more than they save.
const PARALLEL_THRESHOLD: usize = 1 << 14;

/// A run in progress, advanced one step at a time.
#[derive(Debug, Clone)]
pub struct Simulation {
    config: RunConfig,
    oracle: GradientOracle,
    schedules: ScheduleSet,
    workers: Vec<WorkerState>,
    shared: SharedOptState,
    collectives: Collectives,
    diagnostics: Vec<Diagnostic>,
}

impl Simulation {
    pub fn new(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        Self::with_oracle(config, config.build_oracle()?)
    }

    /// Uses `oracle` in place of the one the config describes.
    pub fn with_oracle(config: &RunConfig, oracle: GradientOracle) -> Result<Self> {
        let hyper = &config.hyper;
        if oracle.dim() != hyper.dim || oracle.n_workers() != hyper.n_workers {
            return Err(Error::InvalidConfig(format!(
                "oracle shape {}x{} does not match config {}x{}",
                oracle.n_workers(),
                oracle.dim(),
                hyper.n_workers,
                hyper.dim
            )));
        }
        let schedules = config.build_schedules()?;
        config.algorithm.validate(&schedules)?;
        let x0 = oracle.initial_point();
        let workers = (0..hyper.n_workers)
            .map(|i| WorkerState::new(i, x0.clone(), config.seed.wrapping_add(i as u64)))
            .collect();
        Ok(Self {
            shared: SharedOptState::new(&x0),
            collectives: Collectives::new(hyper.n_workers, hyper.dim),
            config: config.clone(),
            oracle,
            schedules,
            workers,
            diagnostics: Vec::new(),
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn oracle(&self) -> &GradientOracle {
        &self.oracle
    }

    pub fn schedules(&self) -> &ScheduleSet {
        &self.schedules
    }

    pub fn workers(&self) -> &[WorkerState] {
        &self.workers
    }

    pub fn shared(&self) -> &SharedOptState {
        &self.shared
    }

    pub fn collectives(&self) -> &Collectives {
        &self.collectives
    }

    pub fn diagnostics(&self) -> &[Diagnostic] {
        &self.diagnostics
    }

    /// Index of the next step to run.
    pub fn step_index(&self) -> usize {
        self.shared.step
    }

    pub fn is_done(&self) -> bool {
        self.shared.step >= self.config.hyper.total_steps
    }

    /// `x̃ = mean(xᵢ)`.
    pub fn averaged_model(&self) -> ParamVector {
        let xs: Vec<ParamVector> = self.workers.iter().map(|w| w.x.clone()).collect();
        mean(&xs).expect("workers share one dimension")
    }

    /// Volume the schedules imply, for comparison with the ledger.
    pub fn predicted_volume(&self) -> VolumePrediction {
        match self.config.algorithm.kind {
            AlgorithmKind::Adam => VolumePrediction::zero(),
            _ => predicted_volume(&self.schedules, self.config.hyper.dim, self.config.hyper.total_steps),
        }
    }

    fn gradients(&self, t: usize) -> Result<Vec<ParamVector>> {
        let grad = |w: &WorkerState| self.oracle.grad(w.worker_id, t, &w.x);
        if self.workers.len() * self.config.hyper.dim >= PARALLEL_THRESHOLD {
            self.workers.par_iter().map(grad).collect()
        } else {
            self.workers.iter().map(grad).collect()
        }
    }

    /// Runs one step and returns its metrics row.
    pub fn step(&mut self) -> Result<MetricsRecord> {
        let t = self.shared.step;
        let hyper = &self.config.hyper;
        let x_avg = self.averaged_model();
        let loss = self.oracle.loss(&x_avg)?;
        let grad_norm_sq = self.oracle.full_grad(&x_avg)?.norm_sq();

        let grads = self.gradients(t)?;
        let algo = &self.config.algorithm;
        let (workers, shared, schedules, coll) =
            (&mut self.workers, &mut self.shared, &self.schedules, &mut self.collectives);
        let report: StepReport = match algo.kind {
            AlgorithmKind::Adam => adam_baseline_step(t, &grads, workers, shared, schedules, hyper)?,
            AlgorithmKind::DistributedAdam | AlgorithmKind::OnebitAdam => {
                framework_step(t, &grads, workers, shared, schedules, algo, hyper, coll)?
            }
            AlgorithmKind::ZerooneAdam => zeroone_adam_step(t, &grads, workers, shared, schedules, algo, hyper, coll)?,
        };
        self.diagnostics.extend(report.diagnostics.iter().cloned());
        self.check_finite(t, loss, grad_norm_sq)?;

        let ledger = self.collectives.ledger();
        Ok(MetricsRecord {
            step: t,
            loss,
            grad_norm_sq,
            bits_per_param: ledger.bits_per_param(hyper.dim, hyper.total_steps),
            rounds_full: ledger.rounds_full,
            rounds_onebit: ledger.rounds_onebit,
            lr: report.lr,
            synced: report.synced,
            var_updated: report.var_updated,
        })
    }

    fn check_finite(&self, step: usize, loss: f64, grad_norm_sq: f64) -> Result<()> {
        let bad = |what| Err(Error::NonFiniteState { step, what });
        if !loss.is_finite() || !grad_norm_sq.is_finite() {
            return bad("loss");
        }
        if !self.shared.v.is_finite() {
            return bad("variance");
        }
        for w in &self.workers {
            if !w.x.is_finite() {
                return bad("model");
            }
            if !w.m.is_finite() || !w.u.is_finite() {
                return bad("momentum");
            }
        }
        Ok(())
    }

    /// Summary once the run has finished.
    pub fn summarize(&self, records: &[MetricsRecord]) -> Result<RunSummary> {
        let hyper = &self.config.hyper;
        let x_avg = self.averaged_model();
        let ledger = *self.collectives.ledger();
        let predicted = self.predicted_volume();
        let k = self.config.output.last_k;
        Ok(RunSummary {
            algorithm: self.config.algorithm.kind,
            steps: records.len(),
            n_workers: hyper.n_workers,
            dim: hyper.dim,
            final_loss: self.oracle.loss(&x_avg)?,
            final_grad_norm_sq: self.oracle.full_grad(&x_avg)?.norm_sq(),
            last_k: k.min(records.len()),
            mean_last_k_grad_norm_sq: mean_last_k(records, k),
            bits_per_param: ledger.bits_per_param(hyper.dim, hyper.total_steps),
            bits_per_worker: ledger.bits_sent_per_worker,
            rounds: ledger.rounds(),
            rounds_full: ledger.rounds_full,
            rounds_onebit: ledger.rounds_onebit,
            variance_updates: self.shared.variance_updates,
            predicted,
            volume_delta_bits: ledger.bits_sent_per_worker as i128 - predicted.bits_per_worker as i128,
            max_compression_error_sq: self.collectives.max_compression_error_sq(),
            diagnostics: self.diagnostics.clone(),
        })
    }
}

/// Everything a finished run produced.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub records: Vec<MetricsRecord>,
    pub summary: RunSummary,
}

pub fn run_experiment(config: &RunConfig) -> Result<RunOutcome> {
    let mut sim = Simulation::new(config)?;
    let mut records = Vec::with_capacity(config.hyper.total_steps);
    while !sim.is_done() {
        records.push(sim.step()?);
    }
    let summary = sim.summarize(&records)?;
    Ok(RunOutcome { records, summary })
}

/// Runs `config` and writes its metrics CSV and JSON summary under `dir`.
pub fn run_to_dir(config: &RunConfig, dir: impl AsRef<Path>) -> Result<RunOutcome> {
    let dir = dir.as_ref();
    let outcome = run_experiment(config)?;
    std::fs::create_dir_all(dir)?;
    write_csv(&outcome.records, BufWriter::new(File::create(dir.join(&config.output.metrics))?))?;
    let mut summary = serde_json::to_string_pretty(&outcome.summary)?;
    summary.push('\n');
    std::fs::write(dir.join(&config.output.summary), summary)?;
    Ok(outcome)
}
