//! Mask expansion and the pairwise sign convention.
//!
//! For clients `i < j` sharing seed `s_ij`, client `i` adds `expand(s_ij)`
//! and client `j` subtracts it, so `Σ_i r_i ≡ 0 (mod q)` over any full
//! participant set.

use std::collections::BTreeMap;

use num_bigint::BigUint;
use sha2::{Digest, Sha256};

use super::keys::{ClientId, MaskSeed};
use crate::crypto::{GroupParams, Scalar};
use crate::error::{Error, Result};

const PRG_DOMAIN: &[u8] = b"sybil-lab/mask-prg/v1";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskVector(pub Vec<Scalar>);

impl MaskVector {
    pub fn zero(d: usize, gp: &GroupParams) -> Self {
        MaskVector(vec![gp.zero(); d])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Client payload `Δw + r (mod q)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskedUpdate {
    pub client: ClientId,
    pub round: u64,
    pub payload: Vec<Scalar>,
}

/// SHA-256 in counter mode, rejection-sampled onto `[0, q)`.
pub fn expand_seed(seed: &[u8; 32], d: usize, gp: &GroupParams) -> Vec<Scalar> {
    let q_bits = gp.q().bits();
    let width = gp.scalar_len();
    let excess = width as u64 * 8 - q_bits;
    let mut out = Vec::with_capacity(d);
    let mut pool: Vec<u8> = Vec::new();
    let mut counter = 0u64;
    while out.len() < d {
        while pool.len() < width {
            let mut h = Sha256::new();
            h.update(PRG_DOMAIN);
            h.update(seed);
            h.update(counter.to_be_bytes());
            pool.extend_from_slice(&h.finalize());
            counter += 1;
        }
        let candidate = BigUint::from_bytes_be(&pool[..width]) >> excess;
        pool.drain(..width);
        if let Some(s) = gp.scalar_checked(candidate) {
            out.push(s);
        }
    }
    out
}

/// `r_i = Σ_{j>i} m(i,j) − Σ_{j<i} m(j,i)` for pairwise vectors `m`.
pub fn combine_pairwise<F>(
    me: ClientId,
    peers: &[ClientId],
    d: usize,
    gp: &GroupParams,
    mut pair_mask: F,
) -> Result<MaskVector>
where
    F: FnMut(ClientId, ClientId) -> Result<Vec<Scalar>>,
{
    let mut acc = MaskVector::zero(d, gp);
    for &j in peers {
        if j == me {
            continue;
        }
        let (lo, hi) = (me.min(j), me.max(j));
        let m = pair_mask(lo, hi)?;
        if m.len() != d {
            return Err(Error::Shape {
                expected: d,
                actual: m.len(),
            });
        }
        for (a, x) in acc.0.iter_mut().zip(&m) {
            *a = if me < j { gp.add(a, x) } else { gp.sub(a, x) };
        }
    }
    Ok(acc)
}

/// Mask of client `me` in `round` given the pairwise seeds it holds.
pub fn compute_client_mask(
    me: ClientId,
    peers: &[ClientId],
    seeds: &BTreeMap<(ClientId, ClientId), MaskSeed>,
    round: u64,
    d: usize,
    gp: &GroupParams,
) -> Result<MaskVector> {
    combine_pairwise(me, peers, d, gp, |lo, hi| {
        let s = seeds
            .get(&(lo, hi))
            .filter(|s| s.round == round)
            .ok_or_else(|| Error::ProtocolState(format!("missing mask seed for pair ({lo}, {hi}) in round {round}")))?;
        Ok(expand_seed(&s.seed, d, gp))
    })
}

/// Decoding key `Σ_{i∈included} r_i` when only a subset of the masked
/// participants is aggregated. Pairs inside the subset cancel, so only
/// seeds between included and excluded clients are needed.
pub fn subset_decoding_key(
    included: &[ClientId],
    participants: &[ClientId],
    seeds: &BTreeMap<(ClientId, ClientId), MaskSeed>,
    round: u64,
    d: usize,
    gp: &GroupParams,
) -> Result<Vec<Scalar>> {
    let excluded: Vec<ClientId> = participants.iter().copied().filter(|p| !included.contains(p)).collect();
    let mut key = vec![gp.zero(); d];
    for &i in included {
        let partial = compute_client_mask(i, &excluded, seeds, round, d, gp)?;
        for (k, x) in key.iter_mut().zip(&partial.0) {
            *k = gp.add(k, x);
        }
    }
    Ok(key)
}

/// Coordinatewise `Δw + r (mod q)`.
pub fn mask_update(
    delta: &[u64],
    mask: &MaskVector,
    client: ClientId,
    round: u64,
    gp: &GroupParams,
) -> Result<MaskedUpdate> {
    if delta.len() != mask.len() {
        return Err(Error::Shape {
            expected: mask.len(),
            actual: delta.len(),
        });
    }
    let payload = delta
        .iter()
        .zip(&mask.0)
        .map(|(&v, r)| gp.add(&gp.scalar(v), r))
        .collect();
    Ok(MaskedUpdate { client, round, payload })
}

/// Inverse of [`mask_update`].
pub fn unmask(payload: &[Scalar], mask: &MaskVector, gp: &GroupParams) -> Vec<Scalar> {
    payload.iter().zip(&mask.0).map(|(p, r)| gp.sub(p, r)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{setup_group, GroupProfile};
    use crate::secagg::keys::{ClientKeys, KeyRegistry};

    #[test]
    fn three_client_toy_masks_telescope() {
        let gp = setup_group(GroupProfile::Test);
        let fixed = |lo: ClientId, hi: ClientId| -> Result<Vec<Scalar>> {
            Ok(vec![gp.scalar(match (lo, hi) {
                (1, 2) => 5,
                (1, 3) => 7,
                (2, 3) => 2,
                _ => unreachable!(),
            })])
        };
        let ids = [1, 2, 3];
        let r: Vec<Scalar> = ids
            .iter()
            .map(|&i| combine_pairwise(i, &ids, 1, &gp, fixed).unwrap().0[0].clone())
            .collect();
        assert_eq!(r, vec![gp.scalar(1), gp.scalar(8), gp.scalar(2)]);
        assert_eq!(gp.sum_scalars(&r), gp.zero());
    }

    #[test]
    fn two_clients_cancel() {
        let gp = setup_group(GroupProfile::Compact);
        let s = [9u8; 32];
        let m = |_: ClientId, _: ClientId| Ok(expand_seed(&s, 4, &gp));
        let r1 = combine_pairwise(1, &[1, 2], 4, &gp, m).unwrap();
        let r2 = combine_pairwise(2, &[1, 2], 4, &gp, m).unwrap();
        assert_eq!(r1.0, expand_seed(&s, 4, &gp));
        for (a, b) in r1.0.iter().zip(&r2.0) {
            assert_eq!(gp.add(a, b), gp.zero());
        }
    }

    fn full_setup(n: u32, round: u64, gp: &GroupParams) -> (Vec<ClientId>, BTreeMap<(ClientId, ClientId), MaskSeed>) {
        let mut rng = crate::seed::stream(11, "mask-test", n as u64, round);
        let keys: Vec<ClientKeys> = (0..n).map(|i| ClientKeys::generate(i, gp, &mut rng)).collect();
        let mut reg = KeyRegistry::new();
        for k in &keys {
            reg.register(k.id, k.public.clone()).unwrap();
        }
        let mut seeds = BTreeMap::new();
        for a in &keys {
            for b in &keys {
                if a.id < b.id {
                    let s = reg.derive(a, b.id, round, gp).unwrap();
                    seeds.insert(s.pair, s);
                }
            }
        }
        ((0..n).collect(), seeds)
    }

    #[test]
    fn ten_clients_hundred_coords_sum_to_zero() {
        let gp = setup_group(GroupProfile::Compact);
        let (ids, seeds) = full_setup(10, 3, &gp);
        let mut total = vec![gp.zero(); 100];
        for &i in &ids {
            let r = compute_client_mask(i, &ids, &seeds, 3, 100, &gp).unwrap();
            for (t, x) in total.iter_mut().zip(&r.0) {
                *t = gp.add(t, x);
            }
        }
        assert!(total.iter().all(Scalar::is_zero));
    }

    #[test]
    fn missing_seed_is_a_protocol_error() {
        let gp = setup_group(GroupProfile::Compact);
        let (ids, mut seeds) = full_setup(3, 1, &gp);
        seeds.remove(&(0, 2));
        assert!(matches!(
            compute_client_mask(0, &ids, &seeds, 1, 2, &gp),
            Err(Error::ProtocolState(_))
        ));
        // Seeds from another round do not count.
        let (_, seeds) = full_setup(3, 1, &gp);
        assert!(compute_client_mask(0, &ids, &seeds, 2, 2, &gp).is_err());
    }

    #[test]
    fn subset_key_matches_direct_sum() {
        let gp = setup_group(GroupProfile::Compact);
        let (ids, seeds) = full_setup(6, 2, &gp);
        let included = [0, 2, 3, 5];
        let key = subset_decoding_key(&included, &ids, &seeds, 2, 5, &gp).unwrap();
        let mut direct = vec![gp.zero(); 5];
        for &i in &included {
            let r = compute_client_mask(i, &ids, &seeds, 2, 5, &gp).unwrap();
            for (t, x) in direct.iter_mut().zip(&r.0) {
                *t = gp.add(t, x);
            }
        }
        assert_eq!(key, direct);
        let all = subset_decoding_key(&ids, &ids, &seeds, 2, 5, &gp).unwrap();
        assert!(all.iter().all(Scalar::is_zero));
    }

    #[test]
    fn masking_edge_cases() {
        let gp = setup_group(GroupProfile::Compact);
        let r = MaskVector(expand_seed(&[1; 32], 3, &gp));
        let zero = mask_update(&[0, 0, 0], &r, 1, 0, &gp).unwrap();
        assert_eq!(zero.payload, r.0);
        let plain = mask_update(&[4, 5, 6], &MaskVector::zero(3, &gp), 1, 0, &gp).unwrap();
        assert_eq!(plain.payload, vec![gp.scalar(4), gp.scalar(5), gp.scalar(6)]);
        let masked = mask_update(&[4, 5, 6], &r, 1, 0, &gp).unwrap();
        assert_eq!(unmask(&masked.payload, &r, &gp), plain.payload);
        assert!(matches!(
            mask_update(&[1, 2], &r, 1, 0, &gp),
            Err(Error::Shape { expected: 3, actual: 2 })
        ));
    }

    #[test]
    fn expansion_is_deterministic_and_reduced() {
        let gp = setup_group(GroupProfile::Test);
        let a = expand_seed(&[7; 32], 50, &gp);
        assert_eq!(a, expand_seed(&[7; 32], 50, &gp));
        assert!(a.iter().all(|s| s.to_u64().unwrap() < 11));
        // Every residue shows up: no value is systematically skipped.
        let big = expand_seed(&[3; 32], 2000, &gp);
        for v in 0..11u64 {
            assert!(big.iter().any(|s| s.to_u64() == Some(v)));
        }
    }
}
