use std::fmt;
use std::ops::Deref;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum Norm {
    #[default]
    #[serde(rename = "l2")]
    L2,
    #[serde(rename = "linf")]
    LInf,
}

impl fmt::Display for Norm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Norm::L2 => "l2",
            Norm::LInf => "linf",
        })
    }
}

pub fn p_norm(v: &[f64], p: Norm) -> f64 {
    match p {
        Norm::L2 => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
        Norm::LInf => v.iter().fold(0.0, |m, x| m.max(x.abs())),
    }
}

/// Dense model parameters (or a difference of two parameter vectors).
/// Entries are always finite.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParameterVector(Vec<f64>);

impl ParameterVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|x| !x.is_finite()) {
            return Err(Error::Data(format!("parameter {i} is not finite ({})", values[i])));
        }
        Ok(ParameterVector(values))
    }

    pub fn zeros(d: usize) -> Self {
        ParameterVector(vec![0.0; d])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn norm(&self, p: Norm) -> f64 {
        p_norm(&self.0, p)
    }

    fn check_len(&self, other: &[f64]) -> Result<()> {
        if self.0.len() != other.len() {
            return Err(Error::Shape {
                expected: self.0.len(),
                actual: other.len(),
            });
        }
        Ok(())
    }

    /// `self += a · x`
    pub fn axpy(&mut self, a: f64, x: &[f64]) -> Result<()> {
        self.check_len(x)?;
        for (s, v) in self.0.iter_mut().zip(x) {
            *s += a * v;
        }
        Ok(())
    }

    pub fn add(&self, other: &[f64]) -> Result<Self> {
        let mut out = self.clone();
        out.axpy(1.0, other)?;
        Ok(out)
    }

    pub fn sub(&self, other: &[f64]) -> Result<Self> {
        let mut out = self.clone();
        out.axpy(-1.0, other)?;
        Ok(out)
    }

    pub fn scaled(&self, a: f64) -> Self {
        ParameterVector(self.0.iter().map(|x| a * x).collect())
    }

    pub fn dot(&self, other: &[f64]) -> Result<f64> {
        self.check_len(other)?;
        Ok(self.0.iter().zip(other).map(|(a, b)| a * b).sum())
    }

    /// Hex SHA-256 over the little-endian IEEE-754 bytes.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for x in &self.0 {
            h.update(x.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

impl Deref for ParameterVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Shrinks `v` onto the `p`-ball of radius `bound`: rescale for L2,
/// coordinatewise clamp for L∞. Vectors already inside are returned as is.
pub fn clip_to_norm(v: &[f64], bound: f64, p: Norm) -> Result<ParameterVector> {
    if !(bound > 0.0) || !bound.is_finite() {
        return Err(Error::config(
            "bound",
            format!("norm bound must be positive and finite, got {bound}"),
        ));
    }
    let n = p_norm(v, p);
    if n <= bound {
        return ParameterVector::new(v.to_vec());
    }
    let out = match p {
        Norm::L2 => {
            let s = bound / n;
            let mut w: Vec<f64> = v.iter().map(|x| x * s).collect();
            // rounding can leave the result an ulp above the bound
            while p_norm(&w, p) > bound {
                w.iter_mut().for_each(|x| *x *= 1.0 - f64::EPSILON);
            }
            w
        }
        Norm::LInf => v.iter().map(|x| x.clamp(-bound, bound)).collect(),
    };
    ParameterVector::new(out)
}
