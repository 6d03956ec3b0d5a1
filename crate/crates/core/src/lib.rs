//! Deterministic simulator for communication-efficient Adam variants:
//! distributed Adam, 1-bit Adam, and 0/1 Adam with frozen variance, local
//! steps and error-feedback one-bit AllReduce.

pub mod collectives;
pub mod compression;
pub mod error;
pub mod harness;
pub mod optimizers;
pub mod problems;
pub mod schedules;
pub mod state;
pub mod vector;

pub use error::{Error, Result};
pub use vector::ParamVector;
