//! Similarity-based reweighting over cumulative update histories: cosine
//! similarity, pardoning of the less-similar client in each pair, then a
//! logit rescale clamped to `[0, 1]`.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::secagg::ClientId;

/// Per-client running sum of every update the client has submitted.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct UpdateHistory {
    sums: BTreeMap<ClientId, Vec<f64>>,
}

impl UpdateHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, client: ClientId, update: &[f64]) -> Result<()> {
        let entry = self.sums.entry(client).or_insert_with(|| vec![0.0; update.len()]);
        if entry.len() != update.len() {
            return Err(Error::Shape {
                expected: entry.len(),
                actual: update.len(),
            });
        }
        entry.iter_mut().zip(update).for_each(|(s, u)| *s += u);
        Ok(())
    }

    pub fn get(&self, client: ClientId) -> Option<&[f64]> {
        self.sums.get(&client).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.sums.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sums.is_empty()
    }

    pub fn clients(&self) -> impl Iterator<Item = ClientId> + '_ {
        self.sums.keys().copied()
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        0.0
    } else {
        (ab / (aa.sqrt() * bb.sqrt())).clamp(-1.0, 1.0)
    }
}

/// Weight per client in ascending id order. Clients whose history is the
/// zero vector get weight 1.
pub fn foolsgold(history: &UpdateHistory) -> Result<BTreeMap<ClientId, f64>> {
    let ids: Vec<ClientId> = history.clients().collect();
    let vecs: Vec<&[f64]> = ids.iter().map(|&i| history.get(i).unwrap()).collect();
    let live: Vec<usize> = (0..ids.len()).filter(|&i| vecs[i].iter().any(|x| *x != 0.0)).collect();
    if live.len() < 2 {
        return Err(Error::Precondition(format!(
            "foolsgold needs at least two clients with nonzero history, got {}",
            live.len()
        )));
    }
    let n = live.len();
    let mut cs = vec![vec![0.0; n]; n];
    for a in 0..n {
        for b in a + 1..n {
            let c = cosine(vecs[live[a]], vecs[live[b]]);
            cs[a][b] = c;
            cs[b][a] = c;
        }
    }
    let max_cs: Vec<f64> = cs
        .iter()
        .enumerate()
        .map(|(i, row)| {
            row.iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, v)| *v)
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    for i in 0..n {
        for j in 0..n {
            if i != j && max_cs[i] < max_cs[j] {
                cs[i][j] *= max_cs[i] / max_cs[j];
            }
        }
    }
    let mut wv: Vec<f64> = (0..n)
        .map(|i| {
            let m = (0..n)
                .filter(|&j| j != i)
                .map(|j| cs[i][j])
                .fold(f64::NEG_INFINITY, f64::max);
            (1.0 - m).clamp(0.0, 1.0)
        })
        .collect();
    let top = wv.iter().cloned().fold(0.0, f64::max);
    for w in &mut wv {
        *w = if top > 0.0 { *w / top } else { 0.0 };
        if *w == 1.0 {
            *w = 0.99;
        }
        let logit = (*w / (1.0 - *w)).ln() + 0.5;
        *w = if logit.is_nan() || logit < 0.0 {
            0.0
        } else {
            logit.min(1.0)
        };
    }
    let mut out: BTreeMap<ClientId, f64> = ids.iter().map(|&i| (i, 1.0)).collect();
    for (k, &i) in live.iter().enumerate() {
        out.insert(ids[i], wv[k]);
    }
    Ok(out)
}
