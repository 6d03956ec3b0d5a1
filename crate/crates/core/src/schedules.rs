//! Step-set builders for variance updates (T_v) and synchronization (T_u),
//! learning-rate schedules, and the closed-form communication volume.

use serde::{Deserialize, Serialize};

use crate::collectives::{full_round_bits, onebit_round_bits};
use crate::error::{Error, Result};

/// A sorted set of step indices within `[0, total)`, with O(1) membership.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepSet {
    steps: Vec<usize>,
    member: Vec<bool>,
}

impl StepSet {
    pub fn empty(total: usize) -> Self {
        Self { steps: Vec::new(), member: vec![false; total] }
    }

    pub fn all(total: usize) -> Self {
        Self { steps: (0..total).collect(), member: vec![true; total] }
    }

    /// `{0, …, len−1}` clipped to the run length.
    pub fn prefix(len: usize, total: usize) -> Self {
        Self::from_steps((0..len.min(total)).collect(), total).expect("prefix is in range")
    }

    pub fn from_steps(mut steps: Vec<usize>, total: usize) -> Result<Self> {
        steps.sort_unstable();
        steps.dedup();
        let mut member = vec![false; total];
        for &s in &steps {
            if s >= total {
                return Err(Error::ScheduleOutOfRange { step: s, total });
            }
            member[s] = true;
        }
        Ok(Self { steps, member })
    }

    pub fn contains(&self, t: usize) -> bool {
        self.member.get(t).copied().unwrap_or(false)
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn total_steps(&self) -> usize {
        self.member.len()
    }

    pub fn steps(&self) -> &[usize] {
        &self.steps
    }

    pub fn complement(&self) -> Self {
        let total = self.total_steps();
        Self::from_steps((0..total).filter(|&t| !self.contains(t)).collect(), total)
            .expect("complement is in range")
    }

    /// Largest gap between consecutive elements (0 for fewer than two).
    pub fn max_gap(&self) -> usize {
        self.steps.windows(2).map(|w| w[1] - w[0]).max().unwrap_or(0)
    }

    /// True when the set is exactly `{0, …, len−1}`.
    pub fn is_prefix(&self) -> bool {
        self.steps.iter().enumerate().all(|(i, &s)| i == s)
    }

    fn is_superset_of(&self, other: &Self) -> bool {
        other.steps.iter().all(|&s| self.contains(s))
    }
}

/// Variance-update steps: `k₀ = 0`, `k_{j+1} = k_j + 2^⌊j/κ⌋`, truncated at `total`.
///
/// With `sync` given, steps whose surrounding sync interval exceeds one are
/// dropped, so the variance stays frozen once local steps begin.
pub fn build_variance_schedule(kappa: usize, total: usize, sync: Option<&StepSet>) -> Result<StepSet> {
    if kappa == 0 {
        return Err(Error::InvalidConfig("kappa must be at least 1".into()));
    }
    let mut steps = Vec::new();
    let mut k = 0usize;
    let mut j = 0usize;
    while k < total {
        steps.push(k);
        let exp = j / kappa;
        if exp >= usize::BITS as usize - 1 {
            break;
        }
        k = match k.checked_add(1usize << exp) {
            Some(next) => next,
            None => break,
        };
        j += 1;
    }
    if let Some(sync) = sync {
        let intervals = sync_intervals(sync);
        steps.retain(|&t| intervals[t] <= 1);
    }
    StepSet::from_steps(steps, total)
}

/// For every step, the length of the sync interval it falls in: the distance
/// from the latest sync at or before it to the next sync (or to the end of
/// the run). Steps before the first sync get `usize::MAX`.
fn sync_intervals(sync: &StepSet) -> Vec<usize> {
    let total = sync.total_steps();
    let mut out = vec![usize::MAX; total];
    let s = sync.steps();
    for (i, &start) in s.iter().enumerate() {
        let end = s.get(i + 1).copied().unwrap_or(total);
        let gap = end - start;
        out[start..end].iter_mut().for_each(|g| *g = gap);
    }
    out
}

/// Sync steps: interval 1 before `warmup`; from a sync step `s ≥ warmup` the
/// next sync is `min(clip, 2^(⌊(s−warmup)/period⌋+1))` steps later.
pub fn build_sync_schedule(warmup: usize, period: usize, clip: usize, total: usize) -> Result<StepSet> {
    if period == 0 || clip == 0 {
        return Err(Error::InvalidConfig("sync period and clip must be at least 1".into()));
    }
    let mut steps = Vec::new();
    let mut s = 0usize;
    while s < total {
        steps.push(s);
        let gap = if s < warmup {
            1
        } else {
            let doublings = (s - warmup) / period + 1;
            if doublings >= usize::BITS as usize - 1 {
                clip
            } else {
                (1usize << doublings).min(clip)
            }
        };
        s += gap;
    }
    StepSet::from_steps(steps, total)
}

/// Learning-rate schedules, expressed in steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LrSchedule {
    Constant {
        lr: f64,
    },
    /// Linear ramp from 0 to `peak` over `warmup` steps, then multiplied by
    /// `decay` once per `block` steps.
    WarmupExp {
        peak: f64,
        warmup: usize,
        #[serde(default = "default_decay")]
        decay: f64,
        #[serde(default = "default_block")]
        block: usize,
    },
    /// `base` divided by `factor` at each milestone.
    Milestone {
        base: f64,
        milestones: Vec<usize>,
        #[serde(default = "default_factor")]
        factor: f64,
    },
    /// Linear warmup to `peak`, then one cosine half-cycle down to `floor`
    /// at `total`.
    Cosine {
        peak: f64,
        warmup: usize,
        total: usize,
        #[serde(default)]
        floor: f64,
    },
}

fn default_decay() -> f64 {
    0.99
}

fn default_block() -> usize {
    520
}

fn default_factor() -> f64 {
    10.0
}

impl LrSchedule {
    pub fn at(&self, t: usize) -> f64 {
        match *self {
            Self::Constant { lr } => lr,
            Self::WarmupExp { peak, warmup, decay, block } => {
                if t < warmup {
                    peak * t as f64 / warmup as f64
                } else {
                    let blocks = (t - warmup) / block.max(1);
                    peak * decay.powi(blocks as i32)
                }
            }
            Self::Milestone { base, ref milestones, factor } => {
                milestones.iter().filter(|&&m| t >= m).fold(base, |lr, _| lr / factor)
            }
            Self::Cosine { peak, warmup, total, floor } => {
                if t < warmup {
                    peak * t as f64 / warmup as f64
                } else {
                    let span = total.saturating_sub(warmup).max(1) as f64;
                    let progress = ((t - warmup) as f64 / span).min(1.0);
                    floor + 0.5 * (peak - floor) * (1.0 + (std::f64::consts::PI * progress).cos())
                }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::Constant { lr } => lr >= 0.0 && lr.is_finite(),
            Self::WarmupExp { peak, decay, block, .. } => peak >= 0.0 && decay > 0.0 && block > 0,
            Self::Milestone { base, factor, .. } => base >= 0.0 && factor > 0.0,
            Self::Cosine { peak, floor, .. } => peak >= 0.0 && floor >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid learning-rate schedule {self:?}")))
        }
    }
}

/// The step sets and learning rates one run uses.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleSet {
    pub t_v: StepSet,
    pub t_u: StepSet,
    pub lr: LrSchedule,
}

impl ScheduleSet {
    pub fn new(t_v: StepSet, t_u: StepSet, lr: LrSchedule) -> Result<Self> {
        if t_v.total_steps() != t_u.total_steps() {
            return Err(Error::InvalidConfig("T_v and T_u cover different run lengths".into()));
        }
        Ok(Self { t_v, t_u, lr })
    }

    pub fn total_steps(&self) -> usize {
        self.t_v.total_steps()
    }

    /// `H`, the largest gap between consecutive sync steps.
    pub fn max_sync_gap(&self) -> usize {
        self.t_u.max_gap()
    }

    /// `m = |T_v|`.
    pub fn variance_updates(&self) -> usize {
        self.t_v.len()
    }

    /// Sync-gap assumption: the first step synchronizes and no gap exceeds `h`.
    pub fn satisfies_gap_bound(&self, h: usize) -> bool {
        self.t_u.contains(0) && self.max_sync_gap() <= h
    }

    pub fn lr_at(&self, t: usize) -> f64 {
        self.lr.at(t)
    }
}

/// Communication volume implied by a schedule pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolumePrediction {
    pub rounds_full: u64,
    pub rounds_onebit: u64,
    pub rounds: u64,
    pub bits_per_worker: u64,
    pub bits_per_param: f64,
}

impl VolumePrediction {
    pub fn zero() -> Self {
        Self { rounds_full: 0, rounds_onebit: 0, rounds: 0, bits_per_worker: 0, bits_per_param: 0.0 }
    }
}

/// Every `T_v` step costs one full-precision round and every `T_u` step one
/// one-bit round; a step in both costs two rounds.
pub fn predicted_volume(schedules: &ScheduleSet, d: usize, total_steps: usize) -> VolumePrediction {
    let rounds_full = schedules.t_v.len() as u64;
    let rounds_onebit = schedules.t_u.len() as u64;
    let bits_per_worker = rounds_full * full_round_bits(d) + rounds_onebit * onebit_round_bits(d);
    VolumePrediction {
        rounds_full,
        rounds_onebit,
        rounds: rounds_full + rounds_onebit,
        bits_per_worker,
        bits_per_param: bits_per_worker as f64 / (d as f64 * total_steps as f64),
    }
}

/// Whether `bigger` contains `smaller` in both step sets.
pub fn schedule_dominates(bigger: &ScheduleSet, smaller: &ScheduleSet) -> bool {
    bigger.t_v.is_superset_of(&smaller.t_v) && bigger.t_u.is_superset_of(&smaller.t_u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Step-by-step simulation of the doubling rule: walk every step, keep a
    /// countdown to the next sync, and re-arm it from the rule at each sync.
    fn sync_oracle(warmup: usize, period: usize, clip: usize, total: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut countdown = 0usize;
        for t in 0..total {
            if countdown == 0 {
                out.push(t);
                let mut interval = 1usize;
                if t >= warmup {
                    interval = 2;
                    let mut boundary = warmup + period;
                    while t >= boundary && interval < clip {
                        interval *= 2;
                        boundary += period;
                    }
                    interval = interval.min(clip);
                }
                countdown = interval;
            }
            countdown -= 1;
        }
        out
    }

    #[test]
    fn variance_schedule_examples() {
        assert_eq!(build_variance_schedule(1, 20, None).unwrap().steps(), &[0, 1, 3, 7, 15]);
        let mut expected: Vec<usize> = (0..=16).collect();
        expected.push(18);
        assert_eq!(build_variance_schedule(16, 20, None).unwrap().steps(), expected.as_slice());
        assert_eq!(build_variance_schedule(20, 20, None).unwrap(), StepSet::all(20));
        assert!(build_variance_schedule(0, 20, None).is_err());
    }

    #[test]
    fn sync_schedule_examples() {
        let built = build_sync_schedule(4, 4, 16, 20).unwrap();
        assert_eq!(built.steps(), sync_oracle(4, 4, 16, 20).as_slice());
        assert_eq!(built.steps(), &[0, 1, 2, 3, 4, 6, 8, 12]);
        assert_eq!(build_sync_schedule(4, 4, 1, 20).unwrap(), StepSet::all(20));
        assert_eq!(build_sync_schedule(20, 4, 16, 20).unwrap(), StepSet::all(20));
        assert_eq!(build_sync_schedule(25, 1, 16, 20).unwrap(), StepSet::all(20));
    }

    #[test]
    fn coupling_drops_variance_updates_inside_local_windows() {
        let sync = build_sync_schedule(4, 4, 16, 20).unwrap();
        let coupled = build_variance_schedule(1, 20, Some(&sync)).unwrap();
        // {0,1,3,7,15}: 7 lies in the 6..8 window, 15 in 12..20.
        assert_eq!(coupled.steps(), &[0, 1, 3]);
        let all = StepSet::all(20);
        assert_eq!(build_variance_schedule(1, 20, Some(&all)).unwrap().steps(), &[0, 1, 3, 7, 15]);
    }

    #[test]
    fn lr_examples() {
        let w = LrSchedule::WarmupExp { peak: 4e-4, warmup: 100, decay: 0.99, block: 520 };
        assert_eq!(w.at(0), 0.0);
        assert_eq!(w.at(100), 4e-4);
        assert_eq!(w.at(619), 4e-4);
        assert_eq!(w.at(620), 4e-4 * 0.99);

        let m = LrSchedule::Milestone { base: 1e-4, milestones: vec![30, 60], factor: 10.0 };
        assert_eq!(m.at(29), 1e-4);
        assert!((m.at(45) - 1e-5).abs() <= 1e-12 * 1e-5);
        assert!((m.at(90) - 1e-6).abs() <= 1e-12 * 1e-6);

        let c = LrSchedule::Constant { lr: 0.3 };
        assert!((0..50).all(|t| c.at(t) == 0.3));

        let cos = LrSchedule::Cosine { peak: 1.0, warmup: 10, total: 110, floor: 0.1 };
        assert_eq!(cos.at(0), 0.0);
        assert_eq!(cos.at(10), 1.0);
        assert!((cos.at(60) - 0.55).abs() < 1e-12);
        assert!((cos.at(110) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn unknown_lr_kind_is_rejected() {
        let err = toml::from_str::<LrSchedule>("kind = \"triangular\"\nlr = 1.0").unwrap_err();
        assert!(err.to_string().contains("triangular"));
    }

    #[test]
    fn volume_examples() {
        let (d, t) = (64, 10);
        let lr = LrSchedule::Constant { lr: 0.1 };
        let all = ScheduleSet::new(StepSet::all(t), StepSet::all(t), lr.clone()).unwrap();
        let v = predicted_volume(&all, d, t);
        assert_eq!(v.rounds, 20);
        assert_eq!(v.bits_per_param, 32.0 + 2.0 * (d as f64 + 64.0) / d as f64);

        let onebit = ScheduleSet::new(StepSet::empty(t), StepSet::all(t), lr.clone()).unwrap();
        let v = predicted_volume(&onebit, d, t);
        assert_eq!(v.rounds, 10);
        assert_eq!(v.bits_per_param, 4.0);

        let var_only = ScheduleSet::new(StepSet::prefix(3, t), StepSet::empty(t), lr).unwrap();
        let v = predicted_volume(&var_only, d, t);
        assert_eq!((v.rounds_full, v.rounds_onebit), (3, 0));
    }

    proptest! {
        #[test]
        fn sync_schedule_matches_oracle_and_gap_bound(
            warmup in 0usize..50, period in 1usize..40, clip in 1usize..32, total in 1usize..400,
        ) {
            let built = build_sync_schedule(warmup, period, clip, total).unwrap();
            let expected = sync_oracle(warmup, period, clip, total);
            prop_assert_eq!(built.steps(), expected.as_slice());
            prop_assert!(built.contains(0));
            prop_assert!(built.max_gap() <= clip);
        }

        #[test]
        fn variance_schedule_gaps_follow_doubling(kappa in 1usize..20, total in 1usize..2000) {
            let s = build_variance_schedule(kappa, total, None).unwrap();
            prop_assert_eq!(s.steps()[0], 0);
            for (j, w) in s.steps().windows(2).enumerate() {
                prop_assert_eq!(w[1] - w[0], 1usize << (j / kappa));
            }
        }

        #[test]
        fn enlarging_schedules_never_lowers_volume(
            tv in prop::collection::vec(any::<bool>(), 60),
            tu in prop::collection::vec(any::<bool>(), 60),
            extra_v in prop::collection::vec(any::<bool>(), 60),
            extra_u in prop::collection::vec(any::<bool>(), 60),
        ) {
            let set = |mask: &[bool]| StepSet::from_steps((0..60).filter(|&i| mask[i]).collect(), 60).unwrap();
            let union = |a: &[bool], b: &[bool]| a.iter().zip(b).map(|(x, y)| *x || *y).collect::<Vec<_>>();
            let lr = LrSchedule::Constant { lr: 0.1 };
            let small = ScheduleSet::new(set(&tv), set(&tu), lr.clone()).unwrap();
            let big = ScheduleSet::new(set(&union(&tv, &extra_v)), set(&union(&tu, &extra_u)), lr).unwrap();
            prop_assert!(schedule_dominates(&big, &small));
            let (a, b) = (predicted_volume(&small, 16, 60), predicted_volume(&big, 16, 60));
            prop_assert!(b.bits_per_param >= a.bits_per_param);
            prop_assert!(b.rounds >= a.rounds);
        }
    }
}
