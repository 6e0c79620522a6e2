//! Client envelopes: masked payload, per-coordinate extended commitments and
//! range proofs, plus the publicly declared update norm.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::keys::ClientId;
use super::mask::{MaskVector, MaskedUpdate};
use crate::crypto::codec::{Decoder, Encoder};
use crate::crypto::commit::{commit, ExtendedCommitment};
use crate::crypto::range::{prove_range_in_context, verify_range_in_context, RangeProof};
use crate::crypto::GroupParams;
use crate::error::{Error, Result};
use crate::exec::Execution;

/// Each coordinate proves `value − shift ∈ [0, 2^bits)`. The verifier applies
/// the shift homomorphically (`C · g^{−shift}`), so a bound on the quantized
/// window needs no change to the payload encoding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RangePolicy {
    pub bits: u32,
    pub shift: u64,
}

impl RangePolicy {
    pub fn full(bits: u32) -> Self {
        RangePolicy { bits, shift: 0 }
    }

    pub fn admits(&self, v: u64) -> bool {
        v >= self.shift && (v - self.shift) >> self.bits == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClientEnvelope {
    pub masked: MaskedUpdate,
    pub commitments: Vec<ExtendedCommitment>,
    pub proofs: Vec<RangeProof>,
    /// p-norm of the dequantized update, as claimed by the client.
    pub declared_norm: f64,
}

impl ClientEnvelope {
    pub fn client(&self) -> ClientId {
        self.masked.client
    }

    pub fn round(&self) -> u64 {
        self.masked.round
    }

    pub fn dim(&self) -> usize {
        self.masked.payload.len()
    }

    pub fn encode(&self, enc: &mut Encoder) {
        enc.put_u32(self.masked.client);
        enc.put_u64(self.masked.round);
        enc.put_f64(self.declared_norm);
        enc.put_len(self.masked.payload.len());
        for s in &self.masked.payload {
            enc.put_scalar(s);
        }
        enc.put_len(self.commitments.len());
        for c in &self.commitments {
            c.encode(enc);
        }
        enc.put_len(self.proofs.len());
        for p in &self.proofs {
            p.encode(enc);
        }
    }

    pub fn decode(dec: &mut Decoder<'_>, gp: &GroupParams) -> Result<Self> {
        let client = dec.get_u32()?;
        let round = dec.get_u64()?;
        let declared_norm = dec.get_f64()?;
        let n = dec.get_len()?;
        let payload = (0..n).map(|_| dec.get_scalar(gp)).collect::<Result<Vec<_>>>()?;
        let n = dec.get_len()?;
        let commitments = (0..n)
            .map(|_| ExtendedCommitment::decode(dec, gp))
            .collect::<Result<Vec<_>>>()?;
        let n = dec.get_len()?;
        let proofs = (0..n)
            .map(|_| RangeProof::decode(dec, gp))
            .collect::<Result<Vec<_>>>()?;
        Ok(ClientEnvelope {
            masked: MaskedUpdate { client, round, payload },
            commitments,
            proofs,
            declared_norm,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        self.encode(&mut enc);
        enc.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8], gp: &GroupParams) -> Result<Self> {
        let mut dec = Decoder::new(bytes);
        let env = Self::decode(&mut dec, gp)?;
        dec.finish()?;
        Ok(env)
    }
}

/// Fiat–Shamir context for coordinate `k`: binds client, round, declared norm
/// and policy so proofs cannot be replayed or the envelope edited in transit.
fn proof_context(client: ClientId, round: u64, k: usize, declared_norm: f64, policy: RangePolicy) -> Vec<u8> {
    let mut enc = Encoder::new();
    enc.put_bytes(b"sybil-lab/envelope/v1");
    enc.put_u32(client);
    enc.put_u64(round);
    enc.put_u32(k as u32);
    enc.put_f64(declared_norm);
    enc.put_u32(policy.bits);
    enc.put_u64(policy.shift);
    enc.into_bytes()
}

fn shifted(c: &ExtendedCommitment, shift: u64, gp: &GroupParams) -> ExtendedCommitment {
    if shift == 0 {
        return c.clone();
    }
    ExtendedCommitment {
        c: gp.mul(&c.c, &gp.g_pow(&gp.neg(&gp.scalar(shift)))),
        mask_term: c.mask_term.clone(),
    }
}

/// Commits to every quantized coordinate with its mask scalar as blinding and
/// proves it lies in the policy window. Out-of-window coordinates are an
/// error: honest clients clip before building.
#[allow(clippy::too_many_arguments)]
pub fn build_envelope(
    delta: &[u64],
    mask: &MaskVector,
    policy: RangePolicy,
    declared_norm: f64,
    client: ClientId,
    round: u64,
    gp: &GroupParams,
    exec: Execution,
) -> Result<ClientEnvelope> {
    if let Some((k, &v)) = delta.iter().enumerate().find(|(_, &v)| !policy.admits(v)) {
        return Err(Error::Precondition(format!(
            "coordinate {k} = {v} outside proof window [{}, {} + 2^{}); clip before submitting",
            policy.shift, policy.shift, policy.bits
        )));
    }
    let masked = super::mask::mask_update(delta, mask, client, round, gp)?;
    let idx: Vec<usize> = (0..delta.len()).collect();
    let parts = exec.try_map(&idx, |&k| -> Result<(ExtendedCommitment, RangeProof)> {
        let v = gp.scalar(delta[k]);
        let r = &mask.0[k];
        let c = commit(&v, r, gp);
        let ctx = proof_context(client, round, k, declared_norm, policy);
        let proof = prove_range_in_context(&gp.scalar(delta[k] - policy.shift), r, policy.bits, &ctx, gp)?;
        Ok((c, proof))
    })?;
    let (commitments, proofs) = parts.into_iter().unzip();
    Ok(ClientEnvelope {
        masked,
        commitments,
        proofs,
        declared_norm,
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RejectReason {
    Shape {
        payload: usize,
        commitments: usize,
        proofs: usize,
        expected: usize,
    },
    WrongRound {
        expected: u64,
        got: u64,
    },
    Commitment {
        coordinate: usize,
    },
    Range {
        coordinate: usize,
    },
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RejectReason::Shape {
                payload,
                commitments,
                proofs,
                expected,
            } => write!(
                f,
                "shape: payload {payload}, commitments {commitments}, proofs {proofs}, expected {expected}"
            ),
            RejectReason::WrongRound { expected, got } => write!(f, "round: expected {expected}, got {got}"),
            RejectReason::Commitment { coordinate } => {
                write!(f, "coordinate {coordinate}: commitment outside subgroup")
            }
            RejectReason::Range { coordinate } => write!(f, "coordinate {coordinate}: range proof"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Verdict {
    Accept,
    Reject(RejectReason),
}

impl Verdict {
    pub fn is_accept(&self) -> bool {
        matches!(self, Verdict::Accept)
    }

    pub fn encode(&self, enc: &mut Encoder) {
        match self {
            Verdict::Accept => enc.put_u8(0),
            Verdict::Reject(RejectReason::Shape {
                payload,
                commitments,
                proofs,
                expected,
            }) => {
                enc.put_u8(1);
                for v in [payload, commitments, proofs, expected] {
                    enc.put_u64(*v as u64);
                }
            }
            Verdict::Reject(RejectReason::WrongRound { expected, got }) => {
                enc.put_u8(2);
                enc.put_u64(*expected);
                enc.put_u64(*got);
            }
            Verdict::Reject(RejectReason::Commitment { coordinate }) => {
                enc.put_u8(3);
                enc.put_u64(*coordinate as u64);
            }
            Verdict::Reject(RejectReason::Range { coordinate }) => {
                enc.put_u8(4);
                enc.put_u64(*coordinate as u64);
            }
        }
    }

    pub fn decode(dec: &mut Decoder<'_>) -> Result<Self> {
        let usize_of = |d: &mut Decoder<'_>| -> Result<usize> { Ok(d.get_u64()? as usize) };
        Ok(match dec.get_u8()? {
            0 => Verdict::Accept,
            1 => Verdict::Reject(RejectReason::Shape {
                payload: usize_of(dec)?,
                commitments: usize_of(dec)?,
                proofs: usize_of(dec)?,
                expected: usize_of(dec)?,
            }),
            2 => Verdict::Reject(RejectReason::WrongRound {
                expected: dec.get_u64()?,
                got: dec.get_u64()?,
            }),
            3 => Verdict::Reject(RejectReason::Commitment {
                coordinate: usize_of(dec)?,
            }),
            4 => Verdict::Reject(RejectReason::Range {
                coordinate: usize_of(dec)?,
            }),
            t => return Err(Error::Decode(format!("unknown verdict tag {t}"))),
        })
    }
}

/// Accept iff shapes agree with `d`, the round matches and every
/// coordinate's commitment is a subgroup element with a valid range proof.
pub fn verify_envelope(
    env: &ClientEnvelope,
    policy: RangePolicy,
    round: u64,
    d: usize,
    gp: &GroupParams,
    exec: Execution,
) -> Verdict {
    let (np, nc, npr) = (env.masked.payload.len(), env.commitments.len(), env.proofs.len());
    if np != d || nc != d || npr != d {
        return Verdict::Reject(RejectReason::Shape {
            payload: np,
            commitments: nc,
            proofs: npr,
            expected: d,
        });
    }
    if env.round() != round {
        return Verdict::Reject(RejectReason::WrongRound {
            expected: round,
            got: env.round(),
        });
    }
    let idx: Vec<usize> = (0..d).collect();
    let failures = exec.map(&idx, |&k| {
        let c = &env.commitments[k];
        if !c.is_well_formed(gp) {
            return Some(RejectReason::Commitment { coordinate: k });
        }
        let ctx = proof_context(env.client(), round, k, env.declared_norm, policy);
        let target = shifted(c, policy.shift, gp);
        (!verify_range_in_context(&target, &env.proofs[k], policy.bits, &ctx, gp))
            .then_some(RejectReason::Range { coordinate: k })
    });
    match failures.into_iter().flatten().next() {
        Some(reason) => Verdict::Reject(reason),
        None => Verdict::Accept,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{setup_group, GroupProfile};
    use crate::secagg::mask::expand_seed;

    #[test]
    fn two_coordinate_roundtrip() {
        let gp = setup_group(GroupProfile::Compact);
        let r = MaskVector(expand_seed(&[4; 32], 2, &gp));
        let env = build_envelope(&[3, 5], &r, RangePolicy::full(4), 0.5, 7, 2, &gp, Execution::Sequential).unwrap();
        assert_eq!(env.commitments.len(), 2);
        assert_eq!(env.proofs.len(), 2);
        assert_eq!(
            verify_envelope(&env, RangePolicy::full(4), 2, 2, &gp, Execution::Parallel),
            Verdict::Accept
        );
        let decoded = ClientEnvelope::from_bytes(&env.to_bytes(), &gp).unwrap();
        assert_eq!(decoded, env);
    }

    #[test]
    fn empty_envelope_is_vacuously_valid() {
        let gp = setup_group(GroupProfile::Compact);
        let env = build_envelope(
            &[],
            &MaskVector(vec![]),
            RangePolicy::full(4),
            0.0,
            1,
            0,
            &gp,
            Execution::Sequential,
        )
        .unwrap();
        assert_eq!(
            verify_envelope(&env, RangePolicy::full(4), 0, 0, &gp, Execution::Sequential),
            Verdict::Accept
        );
    }

    #[test]
    fn out_of_window_coordinate_is_refused() {
        let gp = setup_group(GroupProfile::Compact);
        let r = MaskVector(expand_seed(&[4; 32], 2, &gp));
        let err = build_envelope(
            &[3, 16],
            &r,
            RangePolicy::full(4),
            0.0,
            1,
            0,
            &gp,
            Execution::Sequential,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Precondition(_)));
        let shifted_policy = RangePolicy { bits: 2, shift: 4 };
        assert!(build_envelope(&[4, 7], &r, shifted_policy, 0.0, 1, 0, &gp, Execution::Sequential).is_ok());
        assert!(build_envelope(&[3, 7], &r, shifted_policy, 0.0, 1, 0, &gp, Execution::Sequential).is_err());
    }

    #[test]
    fn shifted_window_verifies_and_binds_policy() {
        let gp = setup_group(GroupProfile::Compact);
        let r = MaskVector(expand_seed(&[8; 32], 3, &gp));
        let policy = RangePolicy { bits: 3, shift: 100 };
        let env = build_envelope(&[100, 104, 107], &r, policy, 1.0, 2, 0, &gp, Execution::Sequential).unwrap();
        assert!(verify_envelope(&env, policy, 0, 3, &gp, Execution::Sequential).is_accept());
        let other = RangePolicy { bits: 3, shift: 101 };
        assert!(!verify_envelope(&env, other, 0, 3, &gp, Execution::Sequential).is_accept());
    }

    #[test]
    fn forged_and_malformed_envelopes_reject() {
        let gp = setup_group(GroupProfile::Compact);
        let r = MaskVector(expand_seed(&[5; 32], 3, &gp));
        let policy = RangePolicy::full(4);
        let env = build_envelope(&[1, 2, 3], &r, policy, 0.1, 3, 0, &gp, Execution::Sequential).unwrap();

        let mut forged = env.clone();
        let ctx = proof_context(3, 0, 1, 0.1, policy);
        forged.proofs[1] = crate::crypto::range::forge_range_proof_unchecked(&gp.scalar(18), &r.0[1], 4, &ctx, &gp);
        forged.commitments[1] = commit(&gp.scalar(18), &r.0[1], &gp);
        assert_eq!(
            verify_envelope(&forged, policy, 0, 3, &gp, Execution::Sequential),
            Verdict::Reject(RejectReason::Range { coordinate: 1 })
        );

        let mut short = env.clone();
        short.proofs.pop();
        assert!(matches!(
            verify_envelope(&short, policy, 0, 3, &gp, Execution::Sequential),
            Verdict::Reject(RejectReason::Shape { .. })
        ));

        assert!(matches!(
            verify_envelope(&env, policy, 1, 3, &gp, Execution::Sequential),
            Verdict::Reject(RejectReason::WrongRound { .. })
        ));

        let mut renorm = env.clone();
        renorm.declared_norm = 0.2;
        assert!(!verify_envelope(&renorm, policy, 0, 3, &gp, Execution::Sequential).is_accept());
    }
}
