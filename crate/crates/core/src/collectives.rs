//! Simulated worker→server→worker collectives with exact volume accounting.
//!
//! Both collectives are barriers: the caller hands over all `n` inputs at
//! once and reductions run sequentially in ascending worker index.

use serde::{Deserialize, Serialize};

use crate::compression::{compress, CompressorSpec};
use crate::error::{Error, Result};
use crate::vector::{check_dims, mean, ParamVector};

/// Bits per number in a full-precision round (FP16 wire convention).
pub const FULL_PRECISION_BITS: u64 = 16;
/// Bits carrying the shared scale of a one-bit message.
pub const SCALE_BITS: u64 = 64;

/// Bits one worker sends and receives in a full-precision round.
pub fn full_round_bits(d: usize) -> u64 {
    2 * FULL_PRECISION_BITS * d as u64
}

/// Bits one worker sends and receives in a one-bit round.
pub fn onebit_round_bits(d: usize) -> u64 {
    2 * (d as u64 + SCALE_BITS)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollectiveLedger {
    pub rounds_full: u64,
    pub rounds_onebit: u64,
    /// Both directions, per worker.
    pub bits_sent_per_worker: u64,
}

impl CollectiveLedger {
    pub fn rounds(&self) -> u64 {
        self.rounds_full + self.rounds_onebit
    }

    /// Average bits per parameter per step over a run of `total_steps`.
    pub fn bits_per_param(&self, d: usize, total_steps: usize) -> f64 {
        self.bits_sent_per_worker as f64 / (d as f64 * total_steps as f64)
    }
}

/// The collective endpoint shared by all simulated workers.
#[derive(Debug, Clone)]
pub struct Collectives {
    n_workers: usize,
    dim: usize,
    ledger: CollectiveLedger,
    max_error_sq: f64,
}

/// Result of one error-feedback one-bit round.
#[derive(Debug, Clone, PartialEq)]
pub struct OneBitOutput {
    /// The broadcast value z̄.
    pub value: ParamVector,
    /// Largest `‖C[z] − z‖²` among this round's compressions.
    pub max_error_sq: f64,
}

impl Collectives {
    pub fn new(n_workers: usize, dim: usize) -> Self {
        Self { n_workers, dim, ledger: CollectiveLedger::default(), max_error_sq: 0.0 }
    }

    pub fn n_workers(&self) -> usize {
        self.n_workers
    }

    pub fn ledger(&self) -> &CollectiveLedger {
        &self.ledger
    }

    /// Largest squared compression error seen so far (the empirical Δ²).
    pub fn max_compression_error_sq(&self) -> f64 {
        self.max_error_sq
    }

    fn check_inputs(&self, inputs: &[ParamVector]) -> Result<()> {
        if inputs.len() != self.n_workers {
            return Err(Error::WorkerCountMismatch { expected: self.n_workers, got: inputs.len() });
        }
        inputs.iter().try_for_each(|x| check_dims(self.dim, x.len()))
    }

    /// Full-precision AllReduce: the plain average.
    pub fn allreduce(&mut self, inputs: &[ParamVector]) -> Result<ParamVector> {
        self.check_inputs(inputs)?;
        let out = mean(inputs)?;
        self.ledger.rounds_full += 1;
        self.ledger.bits_sent_per_worker += full_round_bits(self.dim);
        Ok(out)
    }

    /// Error-feedback compressed AllReduce.
    ///
    /// Each worker sends `ẑᵢ = C[zᵢ + δᵢ]` and keeps `δᵢ ← zᵢ + δᵢ − ẑᵢ`; the
    /// server broadcasts `z̄ = C[mean(ẑ) + δ̄]` and keeps
    /// `δ̄ ← mean(ẑ) + δ̄ − z̄`. Errors are updated in place.
    pub fn ef_onebit_allreduce(
        &mut self,
        inputs: &[ParamVector],
        worker_errors: &mut [ParamVector],
        server_error: &mut ParamVector,
        spec: CompressorSpec,
    ) -> Result<OneBitOutput> {
        self.check_inputs(inputs)?;
        self.check_inputs(worker_errors)?;
        check_dims(self.dim, server_error.len())?;

        let mut max_error_sq: f64 = 0.0;
        let mut sent = Vec::with_capacity(self.n_workers);
        for (z, delta) in inputs.iter().zip(worker_errors.iter_mut()) {
            let corrected = add(z, delta);
            let compressed = compress(spec, &corrected);
            *delta = sub(&corrected, &compressed);
            max_error_sq = max_error_sq.max(delta.norm_sq());
            sent.push(compressed);
        }

        let corrected = add(&mean(&sent)?, server_error);
        let value = compress(spec, &corrected);
        *server_error = sub(&corrected, &value);
        max_error_sq = max_error_sq.max(server_error.norm_sq());

        self.max_error_sq = self.max_error_sq.max(max_error_sq);
        self.ledger.rounds_onebit += 1;
        self.ledger.bits_sent_per_worker += onebit_round_bits(self.dim);
        Ok(OneBitOutput { value, max_error_sq })
    }
}

fn add(a: &ParamVector, b: &ParamVector) -> ParamVector {
    ParamVector::from_raw(a.iter().zip(b.iter()).map(|(x, y)| x + y).collect())
}

fn sub(a: &ParamVector, b: &ParamVector) -> ParamVector {
    ParamVector::from_raw(a.iter().zip(b.iter()).map(|(x, y)| x - y).collect())
}

/// `δ = mean(δᵢ) + δ̄`, the error term that telescopes across rounds:
/// `z̄_t = mean(z_t) + δ_t − δ_{t+1}`.
///
/// Both residuals enter with the same sign: the server's `δ̄_t − δ̄_{t+1}`
/// adds to the workers' `mean(δᵢ_t − δᵢ_{t+1})`.
pub fn combined_error(worker_errors: &[ParamVector], server_error: &ParamVector) -> Result<ParamVector> {
    let avg = mean(worker_errors)?;
    check_dims(avg.len(), server_error.len())?;
    Ok(add(&avg, server_error))
}
