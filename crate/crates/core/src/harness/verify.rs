//! Self-checks runnable from the command line. Each check records the
//! measured quantity, its threshold and the margin between them.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::collectives::{combined_error, full_round_bits, onebit_round_bits, Collectives};
use crate::compression::{compress, compression_error_sq, compression_error_sq_closed_form, CompressorSpec, PackedOneBit};
use crate::error::{Error, Result};
use crate::harness::config::{RunConfig, SyncPolicy, VariancePolicy};
use crate::harness::runner::{run_experiment, Simulation};
use crate::optimizers::{momentum_bound, AlgorithmConfig, AlgorithmKind, MomentumSource};
use crate::problems::ProblemSpec;
use crate::schedules::{predicted_volume, LrSchedule, ScheduleSet, StepSet};
use crate::vector::{mean, ParamVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Compression,
    Collectives,
    Equivalence,
    Bounds,
    Volume,
}

impl Suite {
    pub const ALL: [Suite; 5] = [Suite::Compression, Suite::Collectives, Suite::Equivalence, Suite::Bounds, Suite::Volume];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Compression => "compression",
            Suite::Collectives => "collectives",
            Suite::Equivalence => "equivalence",
            Suite::Bounds => "bounds",
            Suite::Volume => "volume",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|suite| suite.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown suite {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub suite: Suite,
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    pub threshold: f64,
    /// Distance from the threshold on the passing side; negative on failure.
    pub margin: f64,
    pub detail: String,
}

impl CheckResult {
    fn at_most(suite: Suite, name: &str, measured: f64, threshold: f64, detail: impl Into<String>) -> Self {
        Self {
            suite,
            name: name.into(),
            passed: measured <= threshold,
            measured,
            threshold,
            margin: threshold - measured,
            detail: detail.into(),
        }
    }

    fn at_least(suite: Suite, name: &str, measured: f64, threshold: f64, detail: impl Into<String>) -> Self {
        Self {
            suite,
            name: name.into(),
            passed: measured >= threshold,
            measured,
            threshold,
            margin: measured - threshold,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub checks: Vec<CheckResult>,
}

pub fn verify(suites: &[Suite]) -> Result<VerifyReport> {
    let mut checks = Vec::new();
    for &suite in suites {
        checks.extend(match suite {
            Suite::Compression => compression_checks(),
            Suite::Collectives => collectives_checks()?,
            Suite::Equivalence => equivalence_checks()?,
            Suite::Bounds => bounds_checks()?,
            Suite::Volume => volume_checks()?,
        });
    }
    Ok(VerifyReport { passed: checks.iter().all(|c| c.passed), checks })
}

fn random_vector(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> ParamVector {
    ParamVector::new((0..d).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()).expect("finite draw")
}

fn compression_checks() -> Vec<CheckResult> {
    let s = Suite::Compression;
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0);
    let (mut worst_rel, mut worst_ratio, mut worst_idem, mut pack_failures) = (0.0f64, f64::NEG_INFINITY, 0.0f64, 0u32);
    for _ in 0..1000 {
        let d = rng.random_range(1..=256);
        let scale = 10f64.powf(rng.random_range(-3.0..3.0));
        let x = random_vector(&mut rng, d, scale);
        let direct = compression_error_sq(&x);
        let closed = compression_error_sq_closed_form(&x);
        worst_rel = worst_rel.max((direct - closed).abs() / x.norm_sq().max(f64::MIN_POSITIVE));
        worst_ratio = worst_ratio.max(direct / x.norm_sq() - (1.0 - 1.0 / d as f64));
        let once = compress(CompressorSpec::ONE_BIT, &x);
        let twice = compress(CompressorSpec::ONE_BIT, &once);
        worst_idem = worst_idem.max(once.max_abs_diff(&twice).expect("same dim") / once.norm_inf().max(f64::MIN_POSITIVE));
        let packed = PackedOneBit::pack(&x);
        let back = PackedOneBit::from_bytes(&packed.to_bytes(), d);
        if back.ok().as_ref() != Some(&packed) || packed.unpack() != once {
            pack_failures += 1;
        }
    }
    vec![
        CheckResult::at_most(s, "closed_form_error", worst_rel, 1e-9, "max relative gap, 1000 vectors"),
        CheckResult::at_most(s, "error_ratio_below_one", worst_ratio, 1e-12, "max of ‖C[x]−x‖²/‖x‖² − (1−1/d)"),
        CheckResult::at_most(s, "idempotent", worst_idem, 1e-12, "max relative ‖C[C[x]]−C[x]‖∞"),
        CheckResult::at_most(s, "pack_round_trip", pack_failures as f64, 0.0, "mismatched round trips"),
    ]
}

fn collectives_checks() -> Result<Vec<CheckResult>> {
    let s = Suite::Collectives;
    let (n, d, rounds) = (4, 32, 500);
    let mut rng = ChaCha8Rng::seed_from_u64(0xC1);
    let mut coll = Collectives::new(n, d);
    let mut errors = vec![ParamVector::zeros(d); n];
    let mut server = ParamVector::zeros(d);
    let mut worst = 0.0f64;
    for _ in 0..rounds {
        let inputs: Vec<_> = (0..n).map(|_| random_vector(&mut rng, d, 1.0)).collect();
        let before = combined_error(&errors, &server)?;
        let out = coll.ef_onebit_allreduce(&inputs, &mut errors, &mut server, CompressorSpec::ONE_BIT)?;
        let after = combined_error(&errors, &server)?;
        let avg = mean(&inputs)?;
        for j in 0..d {
            worst = worst.max((out.value[j] - avg[j] - before[j] + after[j]).abs());
        }
        coll.allreduce(&inputs)?;
    }

    let inputs: Vec<_> = (0..n).map(|_| random_vector(&mut rng, d, 1.0)).collect();
    let mut zero_errors = vec![ParamVector::zeros(d); n];
    let mut zero_server = ParamVector::zeros(d);
    let exact = Collectives::new(n, d)
        .ef_onebit_allreduce(&inputs, &mut zero_errors, &mut zero_server, CompressorSpec::IDENTITY)?
        .value
        .max_abs_diff(&mean(&inputs)?)?;

    let expected_bits = rounds as u64 * (full_round_bits(d) + onebit_round_bits(d));
    let ledger = coll.ledger();
    let ledger_gap = (ledger.bits_sent_per_worker as f64 - expected_bits as f64).abs()
        + (ledger.rounds() as f64 - 2.0 * rounds as f64).abs();
    Ok(vec![
        CheckResult::at_most(s, "telescoping", worst, 1e-12, format!("{rounds} rounds, n={n}, d={d}")),
        CheckResult::at_most(s, "identity_is_exact_mean", exact, 0.0, "identity compressor"),
        CheckResult::at_most(s, "ledger_exact", ledger_gap, 0.0, "bits and rounds against closed form"),
    ])
}

/// Shared setup for the equivalence checks: a noisy quadratic with every
/// step synchronized and every variance updated.
fn equivalence_config(kind: AlgorithmKind, n: usize) -> RunConfig {
    let mut c = RunConfig::preset(kind, n, 50, 500);
    c.seed = 17;
    c.schedule.sync = SyncPolicy::EveryStep;
    c.schedule.variance = VariancePolicy::EveryStep;
    c.algorithm = AlgorithmConfig::new(kind).with_compressor(CompressorSpec::IDENTITY);
    c.problem.sigma = 0.5;
    c
}

/// Adam on the averaged gradient, written against plain slices. With
/// `post_update` the model step uses the momentum after this step's gradient.
fn reference_adam(config: &RunConfig, post_update: bool) -> Result<Vec<Vec<f64>>> {
    let oracle = config.build_oracle()?;
    let h = &config.hyper;
    let (n, d) = (h.n_workers, h.dim);
    let mut x = oracle.initial_point().into_vec();
    let (mut m, mut v) = (vec![0.0; d], vec![0.0; d]);
    let mut trajectory = Vec::with_capacity(h.total_steps);
    for t in 0..h.total_steps {
        let point = ParamVector::new(x.clone())?;
        let mut g = vec![0.0; d];
        for i in 0..n {
            for (gj, v) in g.iter_mut().zip(oracle.grad(i, t, &point)?.iter()) {
                *gj += v;
            }
        }
        let lr = config.schedule.lr.at(t);
        for j in 0..d {
            let gj = g[j] / n as f64;
            let m_next = h.beta1 * m[j] + (1.0 - h.beta1) * gj;
            let dir = if post_update { m_next } else { m[j] };
            x[j] -= lr * dir / (v[j] + h.eps).sqrt();
            m[j] = m_next;
            v[j] = h.beta2 * v[j] + (1.0 - h.beta2) * gj * gj;
        }
        trajectory.push(x.clone());
    }
    Ok(trajectory)
}

/// Largest `‖x_worker − x_ref‖∞` over all steps and workers.
fn max_deviation(config: &RunConfig, reference: &[Vec<f64>]) -> Result<f64> {
    let mut sim = Simulation::new(config)?;
    let mut worst = 0.0f64;
    for expected in reference {
        sim.step()?;
        for w in sim.workers() {
            worst = worst.max(w.x.iter().zip(expected).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
        }
    }
    Ok(worst)
}

fn equivalence_checks() -> Result<Vec<CheckResult>> {
    let s = Suite::Equivalence;
    let dist = equivalence_config(AlgorithmKind::DistributedAdam, 4);
    let pre = reference_adam(&dist, false)?;
    let post = reference_adam(&dist, true)?;

    let framework = max_deviation(&dist, &pre)?;
    let zeroone = max_deviation(&equivalence_config(AlgorithmKind::ZerooneAdam, 4), &pre)?;
    let mut half = equivalence_config(AlgorithmKind::ZerooneAdam, 4);
    half.algorithm.momentum_source = MomentumSource::HalfStep;
    let half_step = max_deviation(&half, &post)?;

    let adam = run_experiment(&equivalence_config(AlgorithmKind::Adam, 1))?;
    let single = run_experiment(&equivalence_config(AlgorithmKind::DistributedAdam, 1))?;
    let loss_gap = adam
        .records
        .iter()
        .zip(&single.records)
        .map(|(a, b)| (a.loss - b.loss).abs())
        .fold(0.0, f64::max);

    Ok(vec![
        CheckResult::at_most(s, "framework_vs_distributed_adam", framework, 1e-10, "T_v = all, n=4, d=50, T=500"),
        CheckResult::at_most(
            s,
            "zeroone_vs_distributed_adam",
            zeroone,
            1e-10,
            "identity compressor, T_u = T_v = all; the model step uses the momentum entering the step",
        ),
        CheckResult::at_most(
            s,
            "zeroone_half_step_vs_post_update_adam",
            half_step,
            1e-10,
            "identity compressor, T_u = T_v = all, momentum after this step's gradient",
        ),
        CheckResult::at_most(s, "single_worker_adam", loss_gap, 0.0, "n=1 distributed_adam vs adam, loss column"),
    ])
}

/// Clipped noisy quadratic under the 0/1 Adam schedules.
pub fn bounds_config() -> RunConfig {
    let mut c = RunConfig::preset(AlgorithmKind::ZerooneAdam, 4, 32, 2000);
    c.seed = 23;
    c.hyper.g_inf_clip = Some(1.0);
    c.problem.spec = ProblemSpec::Quadratic { mu: 0.1, l: 2.0, target_scale: 2.0 };
    c.problem.sigma = 1.0;
    c.schedule.sync = SyncPolicy::Doubling { warmup: 100, period: 100, clip: 16 };
    c.schedule.variance = VariancePolicy::Doubling { kappa: 4, couple_to_sync: true };
    c.schedule.lr = LrSchedule::Constant { lr: 1e-2 };
    c
}

/// Worst margins of the variance envelope and the momentum bound over a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundMargins {
    /// Smallest `√(v_t+ε) − β2^{m_t/2}√(v₁+ε)` over steps and coordinates.
    pub variance_lower: f64,
    /// Smallest `√(G∞²+ε) − √(v_t+ε)`.
    pub variance_upper: f64,
    /// Smallest `bound − ‖m‖²` over steps and workers.
    pub momentum: f64,
    /// Largest observed `‖m‖²` and the bound it was compared with at that point.
    pub max_momentum_sq: f64,
    pub steps_checked: usize,
}

/// Runs `config` and tracks the variance envelope and momentum bound at
/// every step. `Δ` is the largest compression error seen so far.
pub fn bound_margins(config: &RunConfig) -> Result<BoundMargins> {
    let g_inf = config
        .hyper
        .g_inf_clip
        .ok_or_else(|| Error::InvalidConfig("bound checks need g_inf_clip".into()))?;
    let h = config.hyper.clone();
    let mut sim = Simulation::new(config)?;
    let mut v1: Option<ParamVector> = None;
    let mut out = BoundMargins {
        variance_lower: f64::INFINITY,
        variance_upper: f64::INFINITY,
        momentum: f64::INFINITY,
        max_momentum_sq: 0.0,
        steps_checked: 0,
    };
    let ceiling = (g_inf * g_inf + h.eps).sqrt();
    while !sim.is_done() {
        sim.step()?;
        let shared = sim.shared();
        if v1.is_none() && shared.variance_updates >= 1 {
            v1 = Some(shared.v.clone());
        }
        if let Some(v1) = &v1 {
            let decay = h.beta2.powf(shared.variance_updates as f64 / 2.0);
            for (vt, v1) in shared.v.iter().zip(v1.iter()) {
                let root = (vt + h.eps).sqrt();
                out.variance_lower = out.variance_lower.min(root - decay * (v1 + h.eps).sqrt());
                out.variance_upper = out.variance_upper.min(ceiling - root);
            }
        }
        let delta = sim.collectives().max_compression_error_sq().sqrt();
        let bound = momentum_bound(h.beta1, g_inf, delta, h.dim);
        for w in sim.workers() {
            let m_sq = w.m.norm_sq();
            out.max_momentum_sq = out.max_momentum_sq.max(m_sq);
            out.momentum = out.momentum.min(bound - m_sq);
        }
        out.steps_checked += 1;
    }
    Ok(out)
}

fn bounds_checks() -> Result<Vec<CheckResult>> {
    let s = Suite::Bounds;
    let config = bounds_config();
    let m = bound_margins(&config)?;
    let detail = format!("clipped quadratic, T={}, {} steps checked", config.hyper.total_steps, m.steps_checked);
    Ok(vec![
        CheckResult::at_least(s, "variance_lower_envelope", m.variance_lower, 0.0, detail.clone()),
        CheckResult::at_least(s, "variance_upper_envelope", m.variance_upper, 0.0, detail.clone()),
        CheckResult::at_least(s, "momentum_bound", m.momentum, 0.0, format!("{detail}; max ‖m‖² = {:.4e}", m.max_momentum_sq)),
    ])
}

/// The 0/1 Adam schedule used for volume accounting: κ=4 with coupling,
/// sync warmup 100, doubling period 100, clip 16.
pub fn volume_config(total: usize, dim: usize) -> RunConfig {
    let mut c = RunConfig::preset(AlgorithmKind::ZerooneAdam, 4, dim, total);
    c.schedule.sync = SyncPolicy::Doubling { warmup: 100, period: 100, clip: 16 };
    c.schedule.variance = VariancePolicy::Doubling { kappa: 4, couple_to_sync: true };
    c
}

fn volume_checks() -> Result<Vec<CheckResult>> {
    let s = Suite::Volume;
    let (total, d) = (1000, 64);
    let zeroone = run_experiment(&volume_config(total, d))?.summary;
    let mut onebit_config = RunConfig::preset(AlgorithmKind::OnebitAdam, 4, d, total);
    onebit_config.schedule.variance = VariancePolicy::Prefix { steps: total / 8 };
    let onebit = run_experiment(&onebit_config)?.summary;

    let gap = |sum: &crate::harness::metrics::RunSummary| {
        sum.volume_delta_bits.unsigned_abs() as f64 + sum.rounds.abs_diff(sum.predicted.rounds) as f64
    };

    let base = volume_config(total, d).build_schedules()?;
    let mut worst_drop = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(0xC4);
    for _ in 0..200 {
        let grow = |set: &StepSet, rng: &mut ChaCha8Rng| {
            let mut steps = set.steps().to_vec();
            steps.extend((0..rng.random_range(0..20)).map(|_| rng.random_range(0..total)));
            StepSet::from_steps(steps, total)
        };
        let bigger = ScheduleSet::new(grow(&base.t_v, &mut rng)?, grow(&base.t_u, &mut rng)?, base.lr.clone())?;
        let drop = predicted_volume(&base, d, total).bits_per_param - predicted_volume(&bigger, d, total).bits_per_param;
        worst_drop = worst_drop.max(drop);
    }

    Ok(vec![
        CheckResult::at_most(s, "zeroone_ledger_matches_prediction", gap(&zeroone), 0.0, "T=1000, d=64"),
        CheckResult::at_most(s, "onebit_ledger_matches_prediction", gap(&onebit), 0.0, "T=1000, d=64, T_v = first T/8"),
        CheckResult::at_most(
            s,
            "zeroone_below_onebit",
            zeroone.bits_per_param / onebit.bits_per_param,
            1.0 - f64::EPSILON,
            format!("{:.4} vs {:.4} bits/param", zeroone.bits_per_param, onebit.bits_per_param),
        ),
        CheckResult::at_most(s, "monotone_volume", worst_drop, 0.0, "200 random enlargements"),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names_round_trip() {
        for suite in Suite::ALL {
            assert_eq!(suite.name().parse::<Suite>().unwrap(), suite);
        }
        assert!("everything".parse::<Suite>().is_err());
    }

    #[test]
    fn margins_carry_sign() {
        let ok = CheckResult::at_most(Suite::Volume, "x", 1.0, 2.0, "");
        assert!(ok.passed && ok.margin == 1.0);
        let bad = CheckResult::at_least(Suite::Volume, "x", 1.0, 2.0, "");
        assert!(!bad.passed && bad.margin == -1.0);
    }

    #[test]
    fn fast_suites_pass() {
        let report = verify(&[Suite::Compression, Suite::Collectives, Suite::Volume]).unwrap();
        for c in &report.checks {
            assert!(c.passed, "{c:?}");
        }
    }
}
