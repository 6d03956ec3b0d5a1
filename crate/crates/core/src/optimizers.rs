//! Step functions for Adam, distributed Adam, the frozen-variance one-bit
//! framework (1-bit Adam is the prefix-`T_v` case), and 0/1 Adam.
//!
//! Conventions shared by every variant: ε sits inside the square root,
//! there is no bias correction, and the model update at step `t` uses the
//! momentum and variance from *before* step `t` updates them.

use serde::{Deserialize, Serialize};

use crate::collectives::Collectives;
use crate::compression::CompressorSpec;
use crate::error::{Error, Result};
use crate::schedules::ScheduleSet;
use crate::state::{HyperParams, SharedOptState, WorkerState};
use crate::vector::{check_dims, ParamVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgorithmKind {
    /// Sequential Adam on the worker-averaged gradient, no communication.
    Adam,
    DistributedAdam,
    OnebitAdam,
    ZerooneAdam,
}

/// How 0/1 Adam accumulates its buffer between syncs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BufferMode {
    /// `u += γ_t·m`, momentum recovered as `ū / Σγ`, model as `x_{t′} − ū/√(v+ε)`.
    #[default]
    LrWeighted,
    /// `u += m`, momentum recovered as `ū / window length`, model as
    /// `x_{t′} − γ_t·ū/√(v+ε)`.
    Plain,
}

/// Which momentum 0/1 Adam feeds into the local model step and the buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentumSource {
    /// The momentum entering step `t` (before this step's gradient).
    #[default]
    PreUpdate,
    /// The momentum after folding in this step's gradient.
    HalfStep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmConfig {
    pub kind: AlgorithmKind,
    #[serde(default)]
    pub buffer_mode: BufferMode,
    #[serde(default)]
    pub momentum_source: MomentumSource,
    #[serde(default)]
    pub compressor: CompressorSpec,
}

impl AlgorithmConfig {
    pub fn new(kind: AlgorithmKind) -> Self {
        Self {
            kind,
            buffer_mode: BufferMode::default(),
            momentum_source: MomentumSource::default(),
            compressor: CompressorSpec::default(),
        }
    }

    pub fn with_compressor(mut self, compressor: CompressorSpec) -> Self {
        self.compressor = compressor;
        self
    }

    pub fn with_buffer_mode(mut self, mode: BufferMode) -> Self {
        self.buffer_mode = mode;
        self
    }

    pub fn with_momentum_source(mut self, source: MomentumSource) -> Self {
        self.momentum_source = source;
        self
    }

    /// Checks the schedule shape the algorithm requires.
    pub fn validate(&self, schedules: &ScheduleSet) -> Result<()> {
        if self.kind == AlgorithmKind::OnebitAdam && !schedules.t_v.is_prefix() {
            return Err(Error::InvalidConfig("onebit_adam needs T_v = {0, …, T0−1}".into()));
        }
        Ok(())
    }
}

/// Something worth surfacing that did not stop the step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Diagnostic {
    /// Σγ over a sync window was zero; the recovered momentum was set to 0.
    ZeroLrWindow { step: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub step: usize,
    pub lr: f64,
    /// A one-bit round ran this step.
    pub synced: bool,
    /// The variance was updated this step.
    pub var_updated: bool,
    pub diagnostics: Vec<Diagnostic>,
}

/// One Adam step. Returns `(x′, m′, v′)` with
/// `m′ = β1·m + (1−β1)·g`, `v′ = β2·v + (1−β2)·g²` and
/// `x′ = x − γ·m/√(v+ε)` using the incoming `m` and `v`.
pub fn adam_step(
    x: &ParamVector,
    m: &ParamVector,
    v: &ParamVector,
    g: &ParamVector,
    gamma: f64,
    hyper: &HyperParams,
) -> Result<(ParamVector, ParamVector, ParamVector)> {
    let d = x.len();
    for other in [m, v, g] {
        check_dims(d, other.len())?;
    }
    let (mut x1, mut m1, mut v1) = (x.clone(), m.clone(), v.clone());
    model_step(&mut x1, m, v, gamma, hyper.eps);
    momentum_step(&mut m1, g, hyper.beta1);
    variance_step(&mut v1, g, hyper.beta2);
    Ok((x1, m1, v1))
}

/// `x ← x − γ·dir/√(v+ε)`
fn model_step(x: &mut ParamVector, dir: &ParamVector, v: &ParamVector, gamma: f64, eps: f64) {
    for ((xi, di), vi) in x.as_mut_slice().iter_mut().zip(dir.iter()).zip(v.iter()) {
        *xi -= gamma * di / (vi + eps).sqrt();
    }
}

fn momentum_step(m: &mut ParamVector, g: &ParamVector, beta1: f64) {
    for (mi, gi) in m.as_mut_slice().iter_mut().zip(g.iter()) {
        *mi = beta1 * *mi + (1.0 - beta1) * gi;
    }
}

fn variance_step(v: &mut ParamVector, g: &ParamVector, beta2: f64) {
    for (vi, gi) in v.as_mut_slice().iter_mut().zip(g.iter()) {
        *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
    }
}

fn check_step(t: usize, shared: &SharedOptState, schedules: &ScheduleSet) -> Result<()> {
    let total = schedules.total_steps();
    if t >= total || t != shared.step {
        return Err(Error::ScheduleOutOfRange { step: t, total });
    }
    Ok(())
}

fn check_workers(workers: &[WorkerState], grads: &[ParamVector], shared: &SharedOptState) -> Result<()> {
    if workers.len() != grads.len() {
        return Err(Error::WorkerCountMismatch { expected: workers.len(), got: grads.len() });
    }
    let d = shared.v.len();
    for (w, g) in workers.iter().zip(grads) {
        check_dims(d, w.x.len())?;
        check_dims(d, g.len())?;
    }
    Ok(())
}

/// Sequential Adam on `mean(grads)`; every worker applies the same update.
pub fn adam_baseline_step(
    t: usize,
    grads: &[ParamVector],
    workers: &mut [WorkerState],
    shared: &mut SharedOptState,
    schedules: &ScheduleSet,
    hyper: &HyperParams,
) -> Result<StepReport> {
    check_step(t, shared, schedules)?;
    check_workers(workers, grads, shared)?;
    let g = crate::vector::mean(grads)?;
    let gamma = schedules.lr_at(t);
    for w in workers.iter_mut() {
        let (x, m, _) = adam_step(&w.x, &w.m, &shared.v, &g, gamma, hyper)?;
        w.x = x;
        w.m = m;
    }
    variance_step(&mut shared.v, &g, hyper.beta2);
    shared.variance_updates += 1;
    shared.step = t + 1;
    Ok(StepReport { step: t, lr: gamma, synced: false, var_updated: true, diagnostics: Vec::new() })
}

/// One step of the frozen-variance framework.
///
/// On `t ∈ T_v` gradients go through a full-precision AllReduce and the
/// variance is refreshed; otherwise they go through the error-feedback
/// one-bit AllReduce and the variance is reused. Momentum and model then
/// take an Adam step with the averaged gradient on every worker.
#[allow(clippy::too_many_arguments)]
pub fn framework_step(
    t: usize,
    grads: &[ParamVector],
    workers: &mut [WorkerState],
    shared: &mut SharedOptState,
    schedules: &ScheduleSet,
    cfg: &AlgorithmConfig,
    hyper: &HyperParams,
    collectives: &mut Collectives,
) -> Result<StepReport> {
    check_step(t, shared, schedules)?;
    check_workers(workers, grads, shared)?;
    let gamma = schedules.lr_at(t);
    let var_updated = schedules.t_v.contains(t);

    let g_bar = if var_updated {
        collectives.allreduce(grads)?
    } else {
        let mut errors: Vec<ParamVector> = workers.iter().map(|w| w.delta_worker.clone()).collect();
        let out = collectives.ef_onebit_allreduce(grads, &mut errors, &mut shared.delta_server, cfg.compressor)?;
        for (w, e) in workers.iter_mut().zip(errors) {
            w.delta_worker = e;
        }
        out.value
    };

    for w in workers.iter_mut() {
        model_step(&mut w.x, &w.m, &shared.v, gamma, hyper.eps);
        momentum_step(&mut w.m, &g_bar, hyper.beta1);
    }
    if var_updated {
        variance_step(&mut shared.v, &g_bar, hyper.beta2);
        shared.variance_updates += 1;
    } else {
        shared.last_sync = t;
    }
    shared.step = t + 1;
    Ok(StepReport { step: t, lr: gamma, synced: !var_updated, var_updated, diagnostics: Vec::new() })
}

/// One step of 0/1 Adam.
///
/// Each worker folds its gradient into a local momentum, takes a local
/// model step and grows its buffer. On `t ∈ T_u` the buffers go through the
/// error-feedback one-bit AllReduce; every worker then rebuilds momentum
/// from the averaged buffer, resets its model to the window anchor minus
/// the preconditioned buffer, and clears the buffer. On `t ∈ T_v` the local
/// gradients additionally go through a full-precision AllReduce to refresh
/// the variance; the sync block runs first when both apply.
#[allow(clippy::too_many_arguments)]
pub fn zeroone_adam_step(
    t: usize,
    grads: &[ParamVector],
    workers: &mut [WorkerState],
    shared: &mut SharedOptState,
    schedules: &ScheduleSet,
    cfg: &AlgorithmConfig,
    hyper: &HyperParams,
    collectives: &mut Collectives,
) -> Result<StepReport> {
    check_step(t, shared, schedules)?;
    check_workers(workers, grads, shared)?;
    let gamma = schedules.lr_at(t);
    let lr_weighted = cfg.buffer_mode == BufferMode::LrWeighted;
    let buffer_weight = if lr_weighted { gamma } else { 1.0 };
    let mut diagnostics = Vec::new();

    for (w, g) in workers.iter_mut().zip(grads) {
        let mut m_half = w.m.clone();
        momentum_step(&mut m_half, g, hyper.beta1);
        let direction = match cfg.momentum_source {
            MomentumSource::PreUpdate => &w.m,
            MomentumSource::HalfStep => &m_half,
        };
        model_step(&mut w.x, direction, &shared.v, gamma, hyper.eps);
        for (ui, di) in w.u.as_mut_slice().iter_mut().zip(direction.iter()) {
            *ui += buffer_weight * di;
        }
        w.m = m_half;
    }
    shared.lr_window_sum += gamma;

    let synced = schedules.t_u.contains(t);
    if synced {
        let buffers: Vec<ParamVector> = workers.iter().map(|w| w.u.clone()).collect();
        let mut errors: Vec<ParamVector> = workers.iter().map(|w| w.delta_worker.clone()).collect();
        let u_bar = collectives
            .ef_onebit_allreduce(&buffers, &mut errors, &mut shared.delta_server, cfg.compressor)?
            .value;

        let denom = if lr_weighted { shared.lr_window_sum } else { (t + 1 - shared.window_start) as f64 };
        let momentum = if denom == 0.0 {
            log::warn!("step {t}: learning rates over the sync window sum to zero; momentum reset to 0");
            diagnostics.push(Diagnostic::ZeroLrWindow { step: t });
            ParamVector::zeros(u_bar.len())
        } else {
            u_bar.scale(1.0 / denom)
        };
        let mut model = shared.anchor.clone();
        model_step(&mut model, &u_bar, &shared.v, if lr_weighted { 1.0 } else { gamma }, hyper.eps);

        for (w, e) in workers.iter_mut().zip(errors) {
            w.delta_worker = e;
            w.x = model.clone();
            w.m = momentum.clone();
            w.u.fill(0.0);
        }
        shared.anchor = model;
        shared.last_sync = t;
        shared.window_start = t + 1;
        shared.lr_window_sum = 0.0;
    }

    let var_updated = schedules.t_v.contains(t);
    if var_updated {
        let g_bar = collectives.allreduce(grads)?;
        variance_step(&mut shared.v, &g_bar, hyper.beta2);
        shared.variance_updates += 1;
    }
    shared.step = t + 1;
    Ok(StepReport { step: t, lr: gamma, synced, var_updated, diagnostics })
}

/// Which convergence theorem's step size to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TheoryVariant {
    /// 0/1 Adam with local steps.
    Local01,
    /// The frozen-variance framework without local steps.
    Basic01,
}

/// Problem constants the theorems depend on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryConstants {
    /// Smoothness `L`.
    pub smoothness: f64,
    /// Gradient noise `σ`.
    pub sigma: f64,
    /// ℓ∞ gradient bound `G∞`.
    pub g_inf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoreticalLr {
    pub lr: f64,
    /// The candidates the minimum was taken over, in theorem order.
    pub candidates: Vec<f64>,
    /// `|T_v| ≤ log(1−β1)/log(β2)`.
    pub precondition_met: bool,
}

/// Constant step size from the convergence theorems.
///
/// `local01`: `min{√(n/(σ²T)), 1/(4L√(G∞²+ε)), 2√(G∞²+ε)/L, 1/6}`;
/// `basic01`: `min{√(n/(σ²T)), 1/(2L√(G∞²+ε)), 1/125}`.
pub fn theoretical_lr(
    variant: TheoryVariant,
    hyper: &HyperParams,
    constants: &TheoryConstants,
    variance_updates: usize,
) -> Result<TheoreticalLr> {
    let TheoryConstants { smoothness: l, sigma, g_inf } = *constants;
    if !(l > 0.0 && sigma > 0.0 && g_inf >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "theoretical lr needs L > 0, sigma > 0, G_inf >= 0; got {l}, {sigma}, {g_inf}"
        )));
    }
    let n = hyper.n_workers as f64;
    let total = hyper.total_steps as f64;
    let root = (g_inf * g_inf + hyper.eps).sqrt();
    let noise_term = (n / (sigma * sigma * total)).sqrt();
    let candidates = match variant {
        TheoryVariant::Local01 => vec![noise_term, 1.0 / (4.0 * l * root), 2.0 * root / l, 1.0 / 6.0],
        TheoryVariant::Basic01 => vec![noise_term, 1.0 / (2.0 * l * root), 1.0 / 125.0],
    };
    let lr = candidates.iter().copied().fold(f64::INFINITY, f64::min);
    let precondition_met = variance_updates as f64 <= hyper.max_variance_updates();
    if !precondition_met {
        log::warn!(
            "|T_v| = {variance_updates} exceeds log(1-beta1)/log(beta2) = {:.3}; the convergence guarantee does not apply",
            hyper.max_variance_updates()
        );
    }
    Ok(TheoreticalLr { lr, candidates, precondition_met })
}

/// Uniform bound on `‖m‖²` for 0/1 Adam: `(3G∞²d + 24Δ²)/(1−β1)²`.
pub fn momentum_bound(beta1: f64, g_inf: f64, delta: f64, d: usize) -> f64 {
    (3.0 * g_inf * g_inf * d as f64 + 24.0 * delta * delta) / ((1.0 - beta1) * (1.0 - beta1))
}
