use rand::seq::index;
use rand::Rng;

use crate::attacks::Population;
use crate::error::{Error, Result};
use crate::secagg::ClientId;

/// Uniform sample of `s` ids without replacement, ascending.
pub fn sample_clients(active: &[ClientId], s: usize, rng: &mut impl Rng) -> Result<Vec<ClientId>> {
    if s > active.len() {
        return Err(Error::config(
            "population.sample",
            format!("cannot sample {s} of {} active clients", active.len()),
        ));
    }
    let mut out: Vec<ClientId> = index::sample(rng, active.len(), s)
        .into_iter()
        .map(|i| active[i])
        .collect();
    out.sort_unstable();
    Ok(out)
}

/// If no controlled id was sampled, replaces a uniformly chosen sampled id
/// with the lowest-id active controlled client. Returns the replaced id.
pub fn enforce_fixed_frequency(
    sampled: &mut [ClientId],
    active: &[ClientId],
    population: &Population,
    rng: &mut impl Rng,
) -> Option<ClientId> {
    if sampled.is_empty() || sampled.iter().any(|&id| population.is_controlled(id)) {
        return None;
    }
    let controlled = active.iter().copied().find(|&id| population.is_controlled(id))?;
    let pos = rng.random_range(0..sampled.len());
    let replaced = std::mem::replace(&mut sampled[pos], controlled);
    sampled.sort_unstable();
    Some(replaced)
}
