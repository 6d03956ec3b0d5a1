//! Dense parameter vectors and the elementwise arithmetic the optimizers need.
//!
//! Every reduction in this module runs left to right over coordinates, so
//! identical inputs give bitwise-identical outputs on every run.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A dense `f64` vector of fixed dimension. Carries models, gradients,
/// momenta, variances, buffers and compression errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

/// Binary elementwise operations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
    Div,
}

impl ParamVector {
    pub fn zeros(d: usize) -> Self {
        Self(vec![0.0; d])
    }

    pub fn filled(d: usize, value: f64) -> Self {
        Self(vec![value; d])
    }

    /// Wraps `values`, rejecting NaN and infinities.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFiniteEntry { index, value });
        }
        Ok(Self(values))
    }

    /// Wraps `values` without the finiteness check. Callers that feed the
    /// result back into the simulator are checked by the runner each step.
    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().fold(0.0, |acc, v| acc + v * v)
    }

    pub fn norm_l1(&self) -> f64 {
        self.0.iter().fold(0.0, |acc, v| acc + v.abs())
    }

    pub fn norm_inf(&self) -> f64 {
        self.0.iter().fold(0.0, |acc: f64, v| acc.max(v.abs()))
    }

    pub fn dot(&self, other: &Self) -> Result<f64> {
        check_dims(self.len(), other.len())?;
        Ok(self.0.iter().zip(&other.0).fold(0.0, |acc, (a, b)| acc + a * b))
    }

    pub fn scale(&self, alpha: f64) -> Self {
        Self(self.0.iter().map(|v| alpha * v).collect())
    }

    /// Elementwise square root; fails on negative entries.
    pub fn sqrt(&self) -> Result<Self> {
        self.0
            .iter()
            .enumerate()
            .map(|(index, &value)| {
                if value < 0.0 {
                    Err(Error::NegativeSqrt { index, value })
                } else {
                    Ok(value.sqrt())
                }
            })
            .collect::<Result<Vec<_>>>()
            .map(Self)
    }

    /// `‖self − other‖∞`
    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        check_dims(self.len(), other.len())?;
        Ok(self
            .0
            .iter()
            .zip(&other.0)
            .fold(0.0, |acc: f64, (a, b)| acc.max((a - b).abs())))
    }

    pub(crate) fn fill(&mut self, value: f64) {
        self.0.iter_mut().for_each(|v| *v = value);
    }
}

impl std::ops::Index<usize> for ParamVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl TryFrom<Vec<f64>> for ParamVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

pub(crate) fn check_dims(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

/// Applies `op` coordinate by coordinate. Division requires every entry of
/// `b` to be strictly positive.
pub fn elementwise(op: Elementwise, a: &ParamVector, b: &ParamVector) -> Result<ParamVector> {
    check_dims(a.len(), b.len())?;
    if op == Elementwise::Div {
        if let Some((index, &value)) = b.0.iter().enumerate().find(|(_, v)| v.is_nan() || **v <= 0.0) {
            return Err(Error::NonPositiveDenominator { index, value });
        }
    }
    let f: fn(f64, f64) -> f64 = match op {
        Elementwise::Add => |x, y| x + y,
        Elementwise::Sub => |x, y| x - y,
        Elementwise::Mul => |x, y| x * y,
        Elementwise::Div => |x, y| x / y,
    };
    Ok(ParamVector(a.0.iter().zip(&b.0).map(|(&x, &y)| f(x, y)).collect()))
}

/// Per-coordinate step size `γ / √(v + ε)`, with ε inside the root.
pub fn effective_lr_vector(gamma: f64, v: &ParamVector, eps: f64) -> ParamVector {
    ParamVector(v.0.iter().map(|vi| gamma / (vi + eps).sqrt()).collect())
}

/// Mean of `inputs`, summed in ascending index order then divided by the count.
pub fn mean(inputs: &[ParamVector]) -> Result<ParamVector> {
    let first = inputs.first().ok_or(Error::WorkerCountMismatch { expected: 1, got: 0 })?;
    let d = first.len();
    let mut acc = vec![0.0; d];
    for x in inputs {
        check_dims(d, x.len())?;
        for (a, v) in acc.iter_mut().zip(&x.0) {
            *a += v;
        }
    }
    let n = inputs.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(ParamVector(acc))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn division() {
        let out = elementwise(Elementwise::Div, &pv(&[1.0, 4.0]), &pv(&[1.0, 2.0])).unwrap();
        assert_eq!(out, pv(&[1.0, 2.0]));
    }

    #[test]
    fn sqrt_of_squares() {
        assert_eq!(pv(&[4.0, 9.0]).sqrt().unwrap(), pv(&[2.0, 3.0]));
        assert!(matches!(pv(&[1.0, -1.0]).sqrt(), Err(Error::NegativeSqrt { index: 1, .. })));
    }

    #[test]
    fn symmetric_add() {
        let out = elementwise(Elementwise::Add, &pv(&[1.0, -1.0]), &pv(&[-1.0, 1.0])).unwrap();
        assert_eq!(out, pv(&[0.0, 0.0]));
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(
            elementwise(Elementwise::Sub, &pv(&[1.0]), &pv(&[1.0, 2.0])),
            Err(Error::DimensionMismatch { expected: 1, got: 2 })
        ));
        assert!(matches!(
            elementwise(Elementwise::Div, &pv(&[1.0, 1.0]), &pv(&[1.0, 0.0])),
            Err(Error::NonPositiveDenominator { index: 1, .. })
        ));
        assert!(ParamVector::new(vec![1.0, f64::NAN]).is_err());
        assert!(ParamVector::new(vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn effective_lr_examples() {
        assert_eq!(effective_lr_vector(1.0, &pv(&[0.0, 0.0]), 1.0), pv(&[1.0, 1.0]));
        assert_eq!(effective_lr_vector(0.1, &pv(&[3.0]), 1.0), pv(&[0.05]));
        assert_eq!(effective_lr_vector(0.0, &pv(&[5.0, 0.1, 7.0]), 1e-8), pv(&[0.0; 3]));
    }

    #[test]
    fn effective_lr_is_monotone_in_variance() {
        let lo = effective_lr_vector(0.3, &pv(&[0.0, 1.0, 2.0]), 1e-3);
        let hi = effective_lr_vector(0.3, &pv(&[0.5, 1.5, 2.0]), 1e-3);
        for (a, b) in lo.iter().zip(hi.iter()) {
            assert!(b <= a);
        }
    }

    #[test]
    fn mean_is_exact_for_consensus() {
        let x = pv(&[0.25, -3.5, 7.0]);
        assert_eq!(mean(&vec![x.clone(); 4]).unwrap(), x);
        assert_eq!(mean(&[pv(&[1.0, 0.0]), pv(&[0.0, 1.0])]).unwrap(), pv(&[0.5, 0.5]));
    }
}
