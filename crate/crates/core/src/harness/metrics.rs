use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::optimizers::{AlgorithmKind, Diagnostic};
use crate::schedules::VolumePrediction;

/// One CSV row. Loss and gradient norm are taken at the worker-averaged
/// model before the step; communication counts are cumulative through it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: usize,
    pub loss: f64,
    pub grad_norm_sq: f64,
    pub bits_per_param: f64,
    pub rounds_full: u64,
    pub rounds_onebit: u64,
    pub lr: f64,
    #[serde(with = "flag")]
    pub synced: bool,
    #[serde(with = "flag")]
    pub var_updated: bool,
}

mod flag {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(value: &bool, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(u8::from(*value))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
        match u8::deserialize(d)? {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(serde::de::Error::custom(format!("expected 0 or 1, got {other}"))),
        }
    }
}

pub fn write_csv<W: Write>(records: &[MetricsRecord], out: W) -> Result<()> {
    let mut writer = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    for record in records {
        writer.serialize(record)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_csv<R: std::io::Read>(input: R) -> Result<Vec<MetricsRecord>> {
    let mut reader = csv::Reader::from_reader(input);
    reader.deserialize().map(|r| r.map_err(Into::into)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub algorithm: AlgorithmKind,
    pub steps: usize,
    pub n_workers: usize,
    pub dim: usize,
    /// Loss at the averaged model after the last step.
    pub final_loss: f64,
    pub final_grad_norm_sq: f64,
    pub last_k: usize,
    pub mean_last_k_grad_norm_sq: f64,
    pub bits_per_param: f64,
    pub bits_per_worker: u64,
    pub rounds: u64,
    pub rounds_full: u64,
    pub rounds_onebit: u64,
    pub variance_updates: usize,
    pub predicted: VolumePrediction,
    /// Ledger bits minus predicted bits; zero for every run.
    pub volume_delta_bits: i128,
    pub max_compression_error_sq: f64,
    pub diagnostics: Vec<Diagnostic>,
}

/// Mean of the last `k` recorded gradient norms (all of them if fewer).
pub fn mean_last_k(records: &[MetricsRecord], k: usize) -> f64 {
    let tail = &records[records.len().saturating_sub(k)..];
    if tail.is_empty() {
        return f64::NAN;
    }
    tail.iter().map(|r| r.grad_norm_sq).sum::<f64>() / tail.len() as f64
}
