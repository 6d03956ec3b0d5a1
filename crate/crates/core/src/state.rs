//! Optimizer, worker and shared state containers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vector::ParamVector;

/// Adam constants plus the problem shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperParams {
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    /// Worker count `n`.
    pub n_workers: usize,
    /// Problem dimension `d`.
    pub dim: usize,
    /// Total steps `T`.
    pub total_steps: usize,
    /// Optional ℓ∞ clip applied to every stochastic gradient (the G∞ bound).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g_inf_clip: Option<f64>,
}

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.999
}

fn default_eps() -> f64 {
    1e-8
}

impl HyperParams {
    pub fn new(n_workers: usize, dim: usize, total_steps: usize) -> Self {
        Self {
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
            n_workers,
            dim,
            total_steps,
            g_inf_clip: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(0.0..1.0).contains(&self.beta1) {
            return bad(format!("beta1 must lie in [0,1), got {}", self.beta1));
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return bad(format!("beta2 must lie in [0,1), got {}", self.beta2));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return bad(format!("eps must be positive, got {}", self.eps));
        }
        if self.n_workers == 0 || self.dim == 0 || self.total_steps == 0 {
            return bad("n_workers, dim and total_steps must be positive".into());
        }
        if let Some(g) = self.g_inf_clip {
            if !(g > 0.0 && g.is_finite()) {
                return bad(format!("g_inf_clip must be positive, got {g}"));
            }
        }
        Ok(())
    }

    /// Largest `|T_v|` allowed by the convergence theorems:
    /// `log(1−β1)/log(β2)`. Infinite when `β2 = 0`.
    pub fn max_variance_updates(&self) -> f64 {
        if self.beta2 == 0.0 {
            f64::INFINITY
        } else {
            (1.0 - self.beta1).ln() / self.beta2.ln()
        }
    }
}

/// Everything one worker owns.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkerState {
    pub worker_id: usize,
    pub x: ParamVector,
    pub m: ParamVector,
    /// Momentum buffer accumulated between syncs.
    pub u: ParamVector,
    /// Worker-side compression error δ⁽ⁱ⁾.
    pub delta_worker: ParamVector,
    pub rng_seed: u64,
}

impl WorkerState {
    pub fn new(worker_id: usize, x0: ParamVector, rng_seed: u64) -> Self {
        let d = x0.len();
        Self {
            worker_id,
            x: x0,
            m: ParamVector::zeros(d),
            u: ParamVector::zeros(d),
            delta_worker: ParamVector::zeros(d),
            rng_seed,
        }
    }
}

/// State every worker agrees on.
#[derive(Debug, Clone, PartialEq)]
pub struct SharedOptState {
    /// Second moment, elementwise non-negative.
    pub v: ParamVector,
    /// Server-side compression error δ̄.
    pub delta_server: ParamVector,
    /// Most recent synchronization step t′ (0 before any sync).
    pub last_sync: usize,
    /// Next step to execute.
    pub step: usize,
    /// Model at the start of the current local-step window, `x_{t′}`.
    pub anchor: ParamVector,
    /// First step whose contribution is still pending in the buffer.
    pub window_start: usize,
    /// Σγ over the pending window.
    pub lr_window_sum: f64,
    /// Number of variance updates performed so far.
    pub variance_updates: usize,
}

impl SharedOptState {
    pub fn new(x0: &ParamVector) -> Self {
        let d = x0.len();
        Self {
            v: ParamVector::zeros(d),
            delta_server: ParamVector::zeros(d),
            last_sync: 0,
            step: 0,
            anchor: x0.clone(),
            window_start: 0,
            lr_window_sum: 0.0,
            variance_updates: 0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fresh_state_is_zero() {
        let x0 = ParamVector::new(vec![1.0, 2.0]).unwrap();
        let w = WorkerState::new(3, x0.clone(), 7);
        assert_eq!(w.m, ParamVector::zeros(2));
        assert_eq!(w.u, ParamVector::zeros(2));
        assert_eq!(w.delta_worker, ParamVector::zeros(2));
        let s = SharedOptState::new(&x0);
        assert_eq!(s.v, ParamVector::zeros(2));
        assert_eq!(s.anchor, x0);
        assert_eq!(s.last_sync, 0);
    }

    #[test]
    fn hyper_validation() {
        let mut h = HyperParams::new(4, 8, 100);
        assert!(h.validate().is_ok());
        h.beta1 = 1.0;
        assert!(h.validate().is_err());
        h.beta1 = 0.9;
        h.eps = 0.0;
        assert!(h.validate().is_err());
        h.eps = 1e-8;
        h.g_inf_clip = Some(-1.0);
        assert!(h.validate().is_err());
    }

    #[test]
    fn variance_update_budget() {
        let h = HyperParams::new(1, 1, 1);
        let m = h.max_variance_updates();
        assert!((m - (0.1f64).ln() / (0.999f64).ln()).abs() < 1e-9);
        assert!(m > 2301.0 && m < 2302.0);
    }
}
