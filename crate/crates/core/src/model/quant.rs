//! Affine fixed-point encoding `x ↦ round((x + R) / s)` with `s = R / 2^{ℓ−1}`.
//!
//! `R` must be a power of two, which makes `s` one too; dequantized values and
//! sums of up to `2^{53−ℓ}` encodings are then exact in `f64`.

use serde::{Deserialize, Serialize};

use super::vector::ParameterVector;
use crate::error::{Error, Result};

pub const MAX_BITS: u32 = 32;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quantizer {
    bits: u32,
    range: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FixedVec {
    pub values: Vec<u64>,
    pub quantizer: Quantizer,
}

impl Quantizer {
    pub fn new(bits: u32, range: f64) -> Result<Self> {
        if !(2..=MAX_BITS).contains(&bits) {
            return Err(Error::config(
                "quantization.bits",
                format!("must lie in [2, {MAX_BITS}], got {bits}"),
            ));
        }
        let power_of_two = range.is_normal() && range > 0.0 && range.to_bits() & ((1u64 << 52) - 1) == 0;
        if !power_of_two {
            return Err(Error::config(
                "quantization.range",
                format!("must be a positive power of two, got {range}"),
            ));
        }
        Ok(Quantizer { bits, range })
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn range(&self) -> f64 {
        self.range
    }

    pub fn scale(&self) -> f64 {
        self.range / (1u64 << (self.bits - 1)) as f64
    }

    pub fn max_code(&self) -> u64 {
        (1u64 << self.bits) - 1
    }

    /// Worst-case `|dequantize(quantize(x)) − x|`.
    pub fn max_error(&self) -> f64 {
        self.scale()
    }

    pub fn quantize_value(&self, x: f64) -> Result<u64> {
        if !x.is_finite() || x.abs() > self.range {
            return Err(Error::Precondition(format!(
                "value {x} outside quantization range [-{r}, {r}]",
                r = self.range
            )));
        }
        let code = ((x + self.range) / self.scale()).round() as u64;
        Ok(code.min(self.max_code()))
    }

    pub fn dequantize_value(&self, code: u64) -> f64 {
        code as f64 * self.scale() - self.range
    }

    pub fn quantize(&self, v: &[f64]) -> Result<FixedVec> {
        let values = v.iter().map(|&x| self.quantize_value(x)).collect::<Result<_>>()?;
        Ok(FixedVec {
            values,
            quantizer: *self,
        })
    }

    pub fn dequantize(&self, codes: &[u64]) -> ParameterVector {
        ParameterVector::new(codes.iter().map(|&c| self.dequantize_value(c)).collect())
            .expect("dequantized codes are finite")
    }

    /// Decodes coordinatewise sums of `count` encodings into `Σ x_i`.
    pub fn dequantize_sum(&self, sums: &[u64], count: usize) -> ParameterVector {
        let offset = count as f64 * self.range;
        ParameterVector::new(sums.iter().map(|&s| s as f64 * self.scale() - offset).collect())
            .expect("dequantized sums are finite")
    }

    pub fn clamp(&self, v: &[f64]) -> ParameterVector {
        ParameterVector::new(v.iter().map(|x| x.clamp(-self.range, self.range)).collect())
            .expect("clamped values are finite")
    }

    /// Quantize-then-dequantize, the view both protocol modes share.
    pub fn round_trip(&self, v: &[f64]) -> Result<ParameterVector> {
        Ok(self.dequantize(&self.quantize(v)?.values))
    }
}

impl FixedVec {
    pub fn dequantize(&self) -> ParameterVector {
        self.quantizer.dequantize(&self.values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn midpoint_and_endpoints() {
        let q = Quantizer::new(16, 1.0).unwrap();
        assert_eq!(q.quantize_value(0.0).unwrap(), 32768);
        assert_eq!(q.quantize_value(-1.0).unwrap(), 0);
        assert_eq!(q.quantize_value(1.0 - f64::EPSILON / 2.0).unwrap(), 65535);
        assert_eq!(q.quantize_value(1.0).unwrap(), 65535);
        assert!(q.quantize_value(1.0 + 1e-12).is_err());
        assert!(q.quantize_value(f64::NAN).is_err());
    }

    #[test]
    fn range_must_be_power_of_two() {
        assert!(Quantizer::new(16, 4.0).is_ok());
        assert!(Quantizer::new(16, 0.125).is_ok());
        assert!(Quantizer::new(16, 3.0).is_err());
        assert!(Quantizer::new(16, 0.0).is_err());
        assert!(Quantizer::new(1, 1.0).is_err());
        assert!(Quantizer::new(33, 1.0).is_err());
    }

    #[test]
    fn random_roundtrips_stay_within_bound() {
        let q = Quantizer::new(16, 4.0).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut worst = 0.0f64;
        for _ in 0..1000 {
            let v: Vec<f64> = (0..63).map(|_| rng.random_range(-4.0..=4.0)).collect();
            let back = q.round_trip(&v).unwrap();
            for (a, b) in v.iter().zip(back.iter()) {
                worst = worst.max((a - b).abs());
            }
        }
        assert!(worst <= 4.0 / 32768.0, "{worst}");
        assert!(worst > 0.0);
    }

    #[test]
    fn sums_decode_exactly() {
        let q = Quantizer::new(16, 2.0).unwrap();
        let codes = [[0u64, 65535, 4], [32768, 1, 99], [7, 7, 7]];
        let sums: Vec<u64> = (0..3).map(|k| codes.iter().map(|c| c[k]).sum()).collect();
        let direct: Vec<f64> = (0..3)
            .map(|k| codes.iter().map(|c| q.dequantize_value(c[k])).sum())
            .collect();
        assert_eq!(&*q.dequantize_sum(&sums, 3), direct.as_slice());
    }

    proptest! {
        #[test]
        fn quantize_is_monotone(a in -8.0f64..=8.0, b in -8.0f64..=8.0, bits in 2u32..=24) {
            let q = Quantizer::new(bits, 8.0).unwrap();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(q.quantize_value(lo).unwrap() <= q.quantize_value(hi).unwrap());
            let back = q.dequantize_value(q.quantize_value(a).unwrap());
            prop_assert!((back - a).abs() <= q.max_error());
        }
    }
}
