//! Pairwise secret agreement: Diffie–Hellman in the commitment group, hashed
//! together with the round index.

use std::collections::BTreeMap;

use rand::RngCore;
use sha2::{Digest, Sha256};

use crate::crypto::{GroupElement, GroupParams, Scalar};
use crate::error::{Error, Result};

pub type ClientId = u32;

const SEED_DOMAIN: &[u8] = b"sybil-lab/mask-seed/v1";

#[derive(Clone, Debug)]
pub struct ClientKeys {
    pub id: ClientId,
    secret: Scalar,
    pub public: GroupElement,
}

impl ClientKeys {
    pub fn from_secret(id: ClientId, secret: Scalar, gp: &GroupParams) -> Self {
        let public = gp.g_pow(&secret);
        ClientKeys { id, secret, public }
    }

    pub fn generate<R: RngCore + ?Sized>(id: ClientId, gp: &GroupParams, rng: &mut R) -> Self {
        Self::from_secret(id, gp.random_scalar(rng), gp)
    }

    pub fn secret(&self) -> &Scalar {
        &self.secret
    }
}

/// Seed shared by clients `pair.0 < pair.1` for one round.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskSeed {
    pub pair: (ClientId, ClientId),
    pub round: u64,
    pub seed: [u8; 32],
}

/// `H(pk_peer^sk ‖ round)`; symmetric in the two endpoints.
pub fn derive_pairwise_secret(sk: &Scalar, peer_public: &GroupElement, round: u64, gp: &GroupParams) -> [u8; 32] {
    let shared = gp.pow(peer_public, sk.value());
    seed_from_shared_point(&shared, round)
}

pub fn seed_from_shared_point(shared: &GroupElement, round: u64) -> [u8; 32] {
    let point = shared.value().to_bytes_be();
    let mut h = Sha256::new();
    h.update(SEED_DOMAIN);
    h.update((point.len() as u32).to_be_bytes());
    h.update(&point);
    h.update(round.to_be_bytes());
    h.finalize().into()
}

/// Public keys of the clients registered for a round.
#[derive(Clone, Debug, Default)]
pub struct KeyRegistry {
    keys: BTreeMap<ClientId, GroupElement>,
}

impl KeyRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, id: ClientId, public: GroupElement) -> Result<()> {
        if self.keys.insert(id, public).is_some() {
            return Err(Error::ProtocolState(format!("client {id} registered twice")));
        }
        Ok(())
    }

    pub fn public_key(&self, id: ClientId) -> Result<&GroupElement> {
        self.keys
            .get(&id)
            .ok_or_else(|| Error::ProtocolState(format!("no public key registered for client {id}")))
    }

    pub fn ids(&self) -> impl Iterator<Item = ClientId> + '_ {
        self.keys.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    /// Seed between `me` and `peer`, as computed by `me`.
    pub fn derive(&self, me: &ClientKeys, peer: ClientId, round: u64, gp: &GroupParams) -> Result<MaskSeed> {
        self.public_key(me.id)?;
        let pk = self.public_key(peer)?;
        if peer == me.id {
            return Err(Error::ProtocolState(format!("client {peer} cannot pair with itself")));
        }
        let pair = (me.id.min(peer), me.id.max(peer));
        Ok(MaskSeed {
            pair,
            round,
            seed: derive_pairwise_secret(&me.secret, pk, round, gp),
        })
    }
}
