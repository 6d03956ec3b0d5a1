//! Sign compressor with a shared ℓ1 scale, plus the identity compressor.
//!
//! The one-bit compressor maps `x` to `(‖x‖₁/d)·sign(x)` with `sign(0) = +1`.
//! Its wire image is a little-endian `f64` scale followed by `⌈d/8⌉` bytes of
//! sign bits, least significant bit first within each byte; a set bit means
//! the coordinate is non-negative.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vector::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CompressorKind {
    #[default]
    OneBit,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(transparent)]
pub struct CompressorSpec {
    pub kind: CompressorKind,
}

impl CompressorSpec {
    pub const ONE_BIT: Self = Self { kind: CompressorKind::OneBit };
    pub const IDENTITY: Self = Self { kind: CompressorKind::Identity };

    /// Sign assigned to exact zeros.
    pub const SIGN_OF_ZERO: f64 = 1.0;
}

#[inline]
fn sign(v: f64) -> f64 {
    if v < 0.0 {
        -1.0
    } else {
        CompressorSpec::SIGN_OF_ZERO
    }
}

pub fn compress(spec: CompressorSpec, x: &ParamVector) -> ParamVector {
    match spec.kind {
        CompressorKind::Identity => x.clone(),
        CompressorKind::OneBit => {
            let scale = one_bit_scale(x);
            ParamVector::from_raw(x.iter().map(|&v| scale * sign(v)).collect())
        }
    }
}

fn one_bit_scale(x: &ParamVector) -> f64 {
    if x.is_empty() {
        0.0
    } else {
        x.norm_l1() / x.len() as f64
    }
}

/// `‖C[x] − x‖²` for the one-bit compressor, evaluated directly.
pub fn compression_error_sq(x: &ParamVector) -> f64 {
    let c = compress(CompressorSpec::ONE_BIT, x);
    c.iter().zip(x.iter()).fold(0.0, |acc, (a, b)| acc + (a - b) * (a - b))
}

/// Closed form of [`compression_error_sq`]: `‖x‖² − ‖x‖₁²/d`.
pub fn compression_error_sq_closed_form(x: &ParamVector) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    let l1 = x.norm_l1();
    x.norm_sq() - l1 * l1 / x.len() as f64
}

/// Packed wire image of a one-bit compressed vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedOneBit {
    pub scale: f64,
    dim: usize,
    sign_bits: Vec<u8>,
}

impl PackedOneBit {
    pub fn pack(x: &ParamVector) -> Self {
        let dim = x.len();
        let mut sign_bits = vec![0u8; dim.div_ceil(8)];
        for (j, &v) in x.iter().enumerate() {
            if sign(v) > 0.0 {
                sign_bits[j / 8] |= 1 << (j % 8);
            }
        }
        Self { scale: one_bit_scale(x), dim, sign_bits }
    }

    pub fn unpack(&self) -> ParamVector {
        ParamVector::from_raw((0..self.dim).map(|j| if self.bit(j) { self.scale } else { -self.scale }).collect())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Whether coordinate `j` carries a `+` sign.
    pub fn bit(&self, j: usize) -> bool {
        self.sign_bits[j / 8] >> (j % 8) & 1 == 1
    }

    /// Bits on the wire: one per coordinate plus the 64-bit scale.
    pub fn payload_bits(&self) -> u64 {
        self.dim as u64 + 64
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + self.sign_bits.len());
        out.extend_from_slice(&self.scale.to_le_bytes());
        out.extend_from_slice(&self.sign_bits);
        out
    }

    pub fn from_bytes(bytes: &[u8], dim: usize) -> Result<Self> {
        let expected = 8 + dim.div_ceil(8);
        if bytes.len() != expected {
            return Err(Error::CorruptPacket(format!(
                "expected {expected} bytes for d = {dim}, got {}",
                bytes.len()
            )));
        }
        let scale = f64::from_le_bytes(bytes[..8].try_into().expect("8-byte slice"));
        if !(scale.is_finite() && scale >= 0.0) {
            return Err(Error::CorruptPacket(format!("invalid scale {scale}")));
        }
        let sign_bits = bytes[8..].to_vec();
        let used = dim % 8;
        if used != 0 && sign_bits.last().is_some_and(|b| b >> used != 0) {
            return Err(Error::CorruptPacket("padding bits are set".into()));
        }
        Ok(Self { scale, dim, sign_bits })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn compress_examples() {
        let one = CompressorSpec::ONE_BIT;
        assert_eq!(compress(one, &pv(&[0.0, 0.0, 0.0])), pv(&[0.0, 0.0, 0.0]));
        assert_eq!(compress(one, &pv(&[1.0, -2.0, 3.0])), pv(&[2.0, -2.0, 2.0]));
        let c = pv(&[0.7; 5]);
        assert_eq!(compress(one, &c), c);
        let x = pv(&[1.5, -0.25, 9.0]);
        assert_eq!(compress(CompressorSpec::IDENTITY, &x), x);
    }

    #[test]
    fn error_examples() {
        assert_eq!(compression_error_sq(&pv(&[0.3; 4])), 0.0);
        assert_eq!(compression_error_sq(&pv(&[1.0, -2.0, 3.0])), 2.0);
        assert_eq!(compression_error_sq_closed_form(&pv(&[1.0, -2.0, 3.0])), 2.0);
        assert_eq!(compression_error_sq(&pv(&[1.0, 0.0])), 0.5);
        assert_eq!(compression_error_sq_closed_form(&pv(&[1.0, 0.0])), 0.5);
    }

    #[test]
    fn pack_examples() {
        let p = PackedOneBit::pack(&pv(&[1.0, -2.0, 3.0]));
        assert_eq!(p.scale, 2.0);
        assert!(p.bit(0) && !p.bit(1) && p.bit(2));
        assert_eq!(p.to_bytes()[8], 0b101);
        assert_eq!(p.unpack(), pv(&[2.0, -2.0, 2.0]));
        assert_eq!(p.payload_bits(), 3 + 64);

        let z = PackedOneBit::pack(&pv(&[0.0; 10]));
        assert_eq!(z.scale, 0.0);
        assert!((0..10).all(|j| z.bit(j)));
        assert_eq!(z.unpack(), pv(&[0.0; 10]));

        let n = PackedOneBit::pack(&pv(&[-5.0]));
        assert_eq!(n.scale, 5.0);
        assert!(!n.bit(0));
        assert_eq!(n.unpack(), pv(&[-5.0]));
    }

    #[test]
    fn byte_layout() {
        let p = PackedOneBit::pack(&pv(&[1.0, -2.0, 3.0]));
        let bytes = p.to_bytes();
        assert_eq!(bytes.len(), 9);
        assert_eq!(&bytes[..8], &2.0f64.to_le_bytes());
        let back = PackedOneBit::from_bytes(&bytes, 3).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn corrupt_payloads() {
        let bytes = PackedOneBit::pack(&pv(&[1.0; 9])).to_bytes();
        assert_eq!(bytes.len(), 10);
        assert!(PackedOneBit::from_bytes(&bytes, 17).is_err());
        assert!(PackedOneBit::from_bytes(&bytes[..9], 9).is_err());
        let mut padded = bytes.clone();
        padded[9] |= 0b1000_0000;
        assert!(PackedOneBit::from_bytes(&padded, 9).is_err());
        let mut nan = bytes;
        nan[..8].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(PackedOneBit::from_bytes(&nan, 9).is_err());
    }

    fn vector() -> impl Strategy<Value = ParamVector> {
        prop::collection::vec(-1e3f64..1e3, 1..=256).prop_map(|v| ParamVector::new(v).unwrap())
    }

    proptest! {
        #[test]
        fn closed_form_matches(x in vector()) {
            let direct = compression_error_sq(&x);
            let closed = compression_error_sq_closed_form(&x);
            let scale = x.norm_sq().max(f64::MIN_POSITIVE);
            prop_assert!((direct - closed).abs() <= 1e-12 * scale);
        }

        #[test]
        fn relative_error_below_one(x in vector()) {
            prop_assume!(x.norm_sq() > 0.0);
            let d = x.len() as f64;
            prop_assert!(compression_error_sq(&x) / x.norm_sq() <= 1.0 - 1.0 / d + 1e-12);
        }

        #[test]
        fn idempotent(x in vector()) {
            let once = compress(CompressorSpec::ONE_BIT, &x);
            let twice = compress(CompressorSpec::ONE_BIT, &once);
            prop_assert!(once.max_abs_diff(&twice).unwrap() <= 1e-12 * once.norm_inf().max(1.0));
        }

        #[test]
        fn scale_equivariant(x in vector(), alpha in 1e-3f64..1e3) {
            let lhs = compress(CompressorSpec::ONE_BIT, &x.scale(alpha));
            let rhs = compress(CompressorSpec::ONE_BIT, &x).scale(alpha);
            prop_assert!(lhs.max_abs_diff(&rhs).unwrap() <= 1e-12 * rhs.norm_inf().max(1.0));
        }

        #[test]
        fn pack_round_trip(x in vector()) {
            let packed = PackedOneBit::pack(&x);
            prop_assert_eq!(packed.unpack(), compress(CompressorSpec::ONE_BIT, &x));
            let back = PackedOneBit::from_bytes(&packed.to_bytes(), x.len()).unwrap();
            prop_assert_eq!(back, packed);
        }
    }
}
