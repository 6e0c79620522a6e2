use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ParameterVector;
use crate::secagg::ClientId;

/// Uniform (`weights = None`) or weighted mean. The uniform mean is computed
/// as the coordinatewise sum divided by `n`. A zero total weight yields the
/// zero vector.
pub fn fedavg(updates: &[(ClientId, &[f64])], weights: Option<&[f64]>) -> Result<ParameterVector> {
    let Some((_, first)) = updates.first() else {
        return Err(Error::Precondition("fedavg of an empty update list".into()));
    };
    let d = first.len();
    if let Some((_, u)) = updates.iter().find(|(_, u)| u.len() != d) {
        return Err(Error::Shape {
            expected: d,
            actual: u.len(),
        });
    }
    let mut out = vec![0.0; d];
    match weights {
        None => {
            for (_, u) in updates {
                out.iter_mut().zip(u.iter()).for_each(|(o, x)| *o += x);
            }
            let n = updates.len() as f64;
            out.iter_mut().for_each(|o| *o /= n);
        }
        Some(w) => {
            if w.len() != updates.len() {
                return Err(Error::Shape {
                    expected: updates.len(),
                    actual: w.len(),
                });
            }
            let total: f64 = w.iter().sum();
            if total > 0.0 {
                for ((_, u), wi) in updates.iter().zip(w) {
                    out.iter_mut().zip(u.iter()).for_each(|(o, x)| *o += wi * x);
                }
                out.iter_mut().for_each(|o| *o /= total);
            }
        }
    }
    ParameterVector::new(out)
}

/// Median with the two middle values averaged for even counts.
pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Precondition("median of an empty list".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Ok(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

pub fn dynamic_bound(public_norms: &[f64], multiplier: f64) -> Result<f64> {
    if !(multiplier > 0.0) {
        return Err(Error::config(
            "aggregator.multiplier",
            format!("must be positive, got {multiplier}"),
        ));
    }
    Ok(median(public_norms)? * multiplier)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BoundMode {
    #[default]
    Reject,
    Clip,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct FilterOutcome {
    pub accepted: Vec<ClientId>,
    pub rejected: Vec<(ClientId, String)>,
    pub clipped: Vec<ClientId>,
}

/// Applies bound `B` to `(client, norm)` pairs. A norm passes when it is at
/// most `B·(1 + 1e-9) + tolerance`. In clip mode nothing is rejected; the
/// over-bound clients are listed in `clipped` for the caller to rescale.
pub fn norm_bound_filter(
    norms: &[(ClientId, f64)],
    bound: f64,
    mode: BoundMode,
    tolerance: f64,
) -> Result<FilterOutcome> {
    if !(bound > 0.0) {
        return Err(Error::config(
            "aggregator.bound",
            format!("must be positive, got {bound}"),
        ));
    }
    let limit = bound * (1.0 + 1e-9) + tolerance;
    let mut out = FilterOutcome::default();
    for &(id, n) in norms {
        if n <= limit {
            out.accepted.push(id);
        } else {
            match mode {
                BoundMode::Reject => out.rejected.push((id, format!("norm {n:.6} exceeds bound {bound:.6}"))),
                BoundMode::Clip => {
                    out.accepted.push(id);
                    out.clipped.push(id);
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fedavg_examples() {
        let a = [2.0];
        let b = [4.0];
        assert_eq!(&*fedavg(&[(1, &a), (2, &b)], None).unwrap(), &[3.0]);
        assert_eq!(&*fedavg(&[(1, &a)], None).unwrap(), &[2.0]);
        assert!(fedavg(&[], None).is_err());
        let big = [10.0 * 0.7];
        let zero = [0.0];
        let mut list = vec![(0, &big[..])];
        list.extend((1..10).map(|i| (i, &zero[..])));
        assert!((fedavg(&list, None).unwrap()[0] - 0.7).abs() < 1e-15);
        assert_eq!(&*fedavg(&[(1, &a), (2, &b)], Some(&[3.0, 1.0])).unwrap(), &[2.5]);
        assert_eq!(&*fedavg(&[(1, &a), (2, &b)], Some(&[0.0, 0.0])).unwrap(), &[0.0]);
        assert!(fedavg(&[(1, &a), (2, &[1.0, 2.0][..])], None).is_err());
    }

    #[test]
    fn twenty_norm_median() {
        let mut norms = vec![1.0; 10];
        norms.extend([10.0; 10]);
        assert_eq!(median(&norms).unwrap(), 5.5);
        assert_eq!(dynamic_bound(&norms, 1.5).unwrap(), 8.25);
        assert_eq!(dynamic_bound(&[0.4; 7], 2.0).unwrap(), 0.8);
        assert!(dynamic_bound(&[], 1.5).is_err());
        assert!(dynamic_bound(&[1.0], 0.0).is_err());
    }

    #[test]
    fn filter_examples() {
        let norms = [(0, 0.5), (1, 0.9), (2, 5.0)];
        let r = norm_bound_filter(&norms, 1.0, BoundMode::Reject, 0.0).unwrap();
        assert_eq!(r.accepted, vec![0, 1]);
        assert_eq!(r.rejected.len(), 1);
        assert_eq!(r.rejected[0].0, 2);
        let c = norm_bound_filter(&norms, 1.0, BoundMode::Clip, 0.0).unwrap();
        assert_eq!(c.accepted, vec![0, 1, 2]);
        assert_eq!(c.clipped, vec![2]);
        let none = norm_bound_filter(&norms, 0.1, BoundMode::Reject, 0.0).unwrap();
        assert!(none.accepted.is_empty());
        assert!(norm_bound_filter(&norms, 1.0, BoundMode::Reject, 4.0)
            .unwrap()
            .rejected
            .is_empty());
    }
}
