//! Seed discipline: one master seed, per-entity streams derived by hashing
//! `(master, role, id, round)`. Streams never depend on iteration order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub fn derive_seed(master: u64, role: &str, id: u64, round: u64) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"sybil-lab/seed/v1");
    h.update(master.to_be_bytes());
    h.update((role.len() as u32).to_be_bytes());
    h.update(role.as_bytes());
    h.update(id.to_be_bytes());
    h.update(round.to_be_bytes());
    h.finalize().into()
}

pub fn stream(master: u64, role: &str, id: u64, round: u64) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(derive_seed(master, role, id, round))
}

/// A 64-bit child seed, for APIs that take a plain integer seed.
pub fn child_seed(master: u64, role: &str, id: u64, round: u64) -> u64 {
    let s = derive_seed(master, role, id, round);
    u64::from_be_bytes(s[..8].try_into().expect("8 bytes"))
}
