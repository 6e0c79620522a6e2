//! Self-describing binary record of one secure-aggregation round.
//!
//! Field order, using the primitives documented in [`crate::crypto::codec`]:
//!
//! | field          | encoding                                                   |
//! |----------------|------------------------------------------------------------|
//! | magic          | 4 raw bytes `SLTR`                                         |
//! | version        | `u32`, currently 1                                         |
//! | hash           | byte string, hash function name (`sha256`)                 |
//! | group          | `u8` profile id (1 test, 2 compact, 3 standard)            |
//! | round          | `u64`                                                      |
//! | dimension      | `u64`                                                      |
//! | policy         | `u32` bits, `u64` shift                                    |
//! | envelopes      | list of envelopes in ascending client id                   |
//! | verdicts       | list of (`u32` client, verdict)                            |
//! | included       | list of `u32` client ids entering the aggregate            |
//! | decoding key   | list of `d` scalars                                        |
//! | outcome        | `u8` 0 then list of `u64` sums, or `u8` 1 then UTF-8 reason |
//!
//! An envelope is `u32` client, `u64` round, `f64` declared norm, then lists
//! of payload scalars, commitments (`c`, mask term) and range proofs. A range
//! proof is a list of bit commitments, a list of bit proofs
//! (`a0 a1 e0 e1 z0 z1`) and the consistency scalar. A verdict is a `u8` tag:
//! 0 accept, 1 shape (four `u64`), 2 wrong round (two `u64`), 3 commitment
//! (`u64` coordinate), 4 range (`u64` coordinate).

use std::collections::BTreeMap;
use std::path::Path;

use super::envelope::{verify_envelope, ClientEnvelope, RangePolicy, Verdict};
use super::keys::ClientId;
use super::round::{aggregate_envelopes, SecureAggRound};
use crate::crypto::codec::{Decoder, Encoder};
use crate::crypto::group::HASH_NAME;
use crate::crypto::{setup_group, GroupProfile, Scalar};
use crate::error::{Error, Result};
use crate::exec::Execution;

pub const MAGIC: &[u8; 4] = b"SLTR";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Outcome {
    Aggregated(Vec<u64>),
    Aborted(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoundTranscript {
    pub profile: GroupProfile,
    pub round: u64,
    pub dim: usize,
    pub policy: RangePolicy,
    pub envelopes: Vec<ClientEnvelope>,
    pub verdicts: BTreeMap<ClientId, Verdict>,
    pub included: Vec<ClientId>,
    pub decoding_key: Vec<Scalar>,
    pub outcome: Outcome,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReverifyReport {
    pub verdict_mismatches: Vec<ClientId>,
    pub outcome_matches: bool,
    pub recomputed: Outcome,
}

impl ReverifyReport {
    pub fn is_consistent(&self) -> bool {
        self.verdict_mismatches.is_empty() && self.outcome_matches
    }
}

impl RoundTranscript {
    /// Captures a verified round together with the aggregation attempt.
    pub fn capture(
        round: &SecureAggRound,
        included: &[ClientId],
        decoding_key: &[Scalar],
        result: &Result<super::round::AggregateSum>,
    ) -> Result<Self> {
        let verdicts = round
            .verdicts()
            .ok_or_else(|| Error::ProtocolState("transcript requested before verify".into()))?
            .clone();
        let outcome = match result {
            Ok(sum) => Outcome::Aggregated(sum.sums.clone()),
            Err(e) => Outcome::Aborted(e.to_string()),
        };
        let mut included = included.to_vec();
        included.sort_unstable();
        Ok(RoundTranscript {
            profile: round.params().profile(),
            round: round.round(),
            dim: round.dim(),
            policy: round.policy(),
            envelopes: round.envelopes().cloned().collect(),
            verdicts,
            included,
            decoding_key: decoding_key.to_vec(),
            outcome,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        for &b in MAGIC {
            enc.put_u8(b);
        }
        enc.put_u32(VERSION);
        enc.put_bytes(HASH_NAME.as_bytes());
        enc.put_u8(self.profile.id());
        enc.put_u64(self.round);
        enc.put_u64(self.dim as u64);
        enc.put_u32(self.policy.bits);
        enc.put_u64(self.policy.shift);
        enc.put_len(self.envelopes.len());
        for e in &self.envelopes {
            e.encode(&mut enc);
        }
        enc.put_len(self.verdicts.len());
        for (id, v) in &self.verdicts {
            enc.put_u32(*id);
            v.encode(&mut enc);
        }
        enc.put_len(self.included.len());
        for id in &self.included {
            enc.put_u32(*id);
        }
        enc.put_len(self.decoding_key.len());
        for s in &self.decoding_key {
            enc.put_scalar(s);
        }
        match &self.outcome {
            Outcome::Aggregated(sums) => {
                enc.put_u8(0);
                enc.put_len(sums.len());
                for s in sums {
                    enc.put_u64(*s);
                }
            }
            Outcome::Aborted(reason) => {
                enc.put_u8(1);
                enc.put_bytes(reason.as_bytes());
            }
        }
        enc.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut dec = Decoder::new(bytes);
        let mut magic = [0u8; 4];
        for b in &mut magic {
            *b = dec.get_u8()?;
        }
        if &magic != MAGIC {
            return Err(Error::Decode("not a round transcript (bad magic)".into()));
        }
        let version = dec.get_u32()?;
        if version != VERSION {
            return Err(Error::Decode(format!("unsupported transcript version {version}")));
        }
        let hash = dec.get_bytes()?;
        if hash != HASH_NAME.as_bytes() {
            return Err(Error::Decode(format!(
                "transcript hash {:?} is not supported",
                String::from_utf8_lossy(hash)
            )));
        }
        let pid = dec.get_u8()?;
        let profile = GroupProfile::from_id(pid).ok_or_else(|| Error::Decode(format!("unknown group id {pid}")))?;
        let gp = setup_group(profile);
        let round = dec.get_u64()?;
        let dim = usize::try_from(dec.get_u64()?).map_err(|_| Error::Decode("dimension overflow".into()))?;
        let policy = RangePolicy {
            bits: dec.get_u32()?,
            shift: dec.get_u64()?,
        };
        let n = dec.get_len()?;
        let envelopes = (0..n)
            .map(|_| ClientEnvelope::decode(&mut dec, &gp))
            .collect::<Result<Vec<_>>>()?;
        let n = dec.get_len()?;
        let mut verdicts = BTreeMap::new();
        for _ in 0..n {
            let id = dec.get_u32()?;
            if verdicts.insert(id, Verdict::decode(&mut dec)?).is_some() {
                return Err(Error::Decode(format!("duplicate verdict for client {id}")));
            }
        }
        let n = dec.get_len()?;
        let included = (0..n).map(|_| dec.get_u32()).collect::<Result<Vec<_>>>()?;
        let n = dec.get_len()?;
        let decoding_key = (0..n).map(|_| dec.get_scalar(&gp)).collect::<Result<Vec<_>>>()?;
        let outcome = match dec.get_u8()? {
            0 => {
                let n = dec.get_len()?;
                Outcome::Aggregated((0..n).map(|_| dec.get_u64()).collect::<Result<Vec<_>>>()?)
            }
            1 => Outcome::Aborted(
                String::from_utf8(dec.get_bytes()?.to_vec())
                    .map_err(|_| Error::Decode("abort reason is not UTF-8".into()))?,
            ),
            t => return Err(Error::Decode(format!("unknown outcome tag {t}"))),
        };
        dec.finish()?;
        Ok(RoundTranscript {
            profile,
            round,
            dim,
            policy,
            envelopes,
            verdicts,
            included,
            decoding_key,
            outcome,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Recomputes every verdict and the aggregation from the recorded inputs.
    pub fn reverify(&self, exec: Execution) -> ReverifyReport {
        let gp = setup_group(self.profile);
        let fresh = exec.map(&self.envelopes, |e| {
            (
                e.client(),
                verify_envelope(e, self.policy, self.round, self.dim, &gp, Execution::Sequential),
            )
        });
        let fresh: BTreeMap<_, _> = fresh.into_iter().collect();
        let mut verdict_mismatches: Vec<ClientId> = fresh
            .iter()
            .filter(|(id, v)| self.verdicts.get(id) != Some(v))
            .map(|(&id, _)| id)
            .collect();
        verdict_mismatches.extend(self.verdicts.keys().filter(|id| !fresh.contains_key(id)));
        verdict_mismatches.sort_unstable();
        verdict_mismatches.dedup();

        let by_id: BTreeMap<_, _> = self.envelopes.iter().map(|e| (e.client(), e)).collect();
        let recomputed = match self
            .included
            .iter()
            .map(|id| match (by_id.get(id), fresh.get(id)) {
                (Some(e), Some(Verdict::Accept)) => Ok(*e),
                _ => Err(Error::ProtocolState(format!(
                    "client {id} included without an accepted envelope"
                ))),
            })
            .collect::<Result<Vec<_>>>()
            .and_then(|envs| aggregate_envelopes(&envs, &self.decoding_key, self.dim, &gp, exec))
        {
            Ok(sum) => Outcome::Aggregated(sum.sums),
            Err(e) => Outcome::Aborted(e.to_string()),
        };
        ReverifyReport {
            verdict_mismatches,
            outcome_matches: recomputed == self.outcome,
            recomputed,
        }
    }
}
