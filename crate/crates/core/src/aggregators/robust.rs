use crate::error::{Error, Result};
use crate::model::ParameterVector;
use crate::secagg::ClientId;

use super::linear::median;

fn check_shapes(updates: &[(ClientId, &[f64])]) -> Result<usize> {
    let Some((_, first)) = updates.first() else {
        return Err(Error::Precondition("aggregation of an empty update list".into()));
    };
    let d = first.len();
    match updates.iter().find(|(_, u)| u.len() != d) {
        Some((_, u)) => Err(Error::Shape {
            expected: d,
            actual: u.len(),
        }),
        None => Ok(d),
    }
}

/// Krum score of each update: sum of squared distances to its `n − f − 2`
/// nearest neighbours.
pub fn krum_scores(updates: &[(ClientId, &[f64])], f: usize) -> Result<Vec<f64>> {
    check_shapes(updates)?;
    let n = updates.len();
    if n < f + 3 {
        return Err(Error::config(
            "aggregator.f",
            format!("multi-krum needs n ≥ f + 3, got n={n}, f={f}"),
        ));
    }
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    Ok((0..n)
        .map(|i| {
            let mut ds: Vec<f64> = (0..n)
                .filter(|&j| j != i)
                .map(|j| dist(updates[i].1, updates[j].1))
                .collect();
            ds.sort_by(f64::total_cmp);
            ds[..n - f - 2].iter().sum()
        })
        .collect())
}

/// The `m` lowest-scoring clients, ties to the lower id, in selection order.
pub fn multi_krum(updates: &[(ClientId, &[f64])], f: usize, m: usize) -> Result<Vec<ClientId>> {
    let scores = krum_scores(updates, f)?;
    if m == 0 || m > updates.len() {
        return Err(Error::config(
            "aggregator.m",
            format!("multi-krum selection size must lie in [1, {}], got {m}", updates.len()),
        ));
    }
    let mut order: Vec<usize> = (0..updates.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(updates[a].0.cmp(&updates[b].0)));
    Ok(order[..m].iter().map(|&i| updates[i].0).collect())
}

pub fn coord_median(updates: &[(ClientId, &[f64])]) -> Result<ParameterVector> {
    let d = check_shapes(updates)?;
    let out = (0..d)
        .map(|k| median(&updates.iter().map(|(_, u)| u[k]).collect::<Vec<_>>()))
        .collect::<Result<Vec<_>>>()?;
    ParameterVector::new(out)
}

/// Number trimmed from each end: `⌊βn⌋`.
pub fn trim_count(beta: f64, n: usize) -> usize {
    (beta * n as f64 + 1e-9).floor() as usize
}

pub fn trimmed_mean(updates: &[(ClientId, &[f64])], beta: f64) -> Result<ParameterVector> {
    if !(0.0..0.5).contains(&beta) {
        return Err(Error::config(
            "aggregator.trim",
            format!("trim fraction must lie in [0, 0.5), got {beta}"),
        ));
    }
    let d = check_shapes(updates)?;
    let n = updates.len();
    let t = trim_count(beta, n);
    let mut col = vec![0.0; n];
    let out = (0..d)
        .map(|k| {
            for (c, (_, u)) in col.iter_mut().zip(updates) {
                *c = u[k];
            }
            col.sort_by(f64::total_cmp);
            let kept = &col[t..n - t];
            kept.iter().sum::<f64>() / kept.len() as f64
        })
        .collect();
    ParameterVector::new(out)
}
