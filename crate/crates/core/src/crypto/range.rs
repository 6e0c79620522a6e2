//! Bit-decomposition range proofs.
//!
//! To show a commitment `C = g^v h^r` opens to `v ∈ [0, 2^ℓ)` the prover
//! commits to every bit `b_j` as `C_j = g^{b_j} h^{r_j}` (with mask term
//! `g^{r_j}`), proves each `C_j` opens to 0 or 1 with a Cramer–Damgård–
//! Schoenmakers OR proof of knowledge of `log_h`, and publishes
//! `z = r − Σ 2^j r_j`. The verifier checks `Π C_j^{2^j} · h^z = C` and the
//! same relation on the mask terms.
//!
//! Challenges are Fiat–Shamir hashes over the caller's context, the value
//! commitment and the bit transcript. Nonces are derived from a hash of the
//! witness and context, so proving is deterministic.

use num_bigint::BigUint;
use num_traits::One;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use super::codec::{Decoder, Encoder};
use super::commit::{commit, ExtendedCommitment};
use super::group::{GroupElement, GroupParams, Scalar};
use crate::error::{Error, Result};

const CHALLENGE_DOMAIN: &[u8] = b"sybil-lab/range/bit-or/v1";
const NONCE_DOMAIN: &[u8] = b"sybil-lab/range/nonce/v1";

/// OR-proof transcript for one committed bit.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BitProof {
    pub a0: GroupElement,
    pub a1: GroupElement,
    pub e0: Scalar,
    pub e1: Scalar,
    pub z0: Scalar,
    pub z1: Scalar,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RangeProof {
    pub bit_commitments: Vec<ExtendedCommitment>,
    pub bit_proofs: Vec<BitProof>,
    pub consistency_opening: Scalar,
}

impl RangeProof {
    pub fn encode(&self, enc: &mut Encoder) {
        enc.put_len(self.bit_commitments.len());
        for c in &self.bit_commitments {
            c.encode(enc);
        }
        enc.put_len(self.bit_proofs.len());
        for p in &self.bit_proofs {
            enc.put_element(&p.a0);
            enc.put_element(&p.a1);
            enc.put_scalar(&p.e0);
            enc.put_scalar(&p.e1);
            enc.put_scalar(&p.z0);
            enc.put_scalar(&p.z1);
        }
        enc.put_scalar(&self.consistency_opening);
    }

    pub fn decode(dec: &mut Decoder<'_>, gp: &GroupParams) -> Result<Self> {
        let n = dec.get_len()?;
        let bit_commitments = (0..n)
            .map(|_| ExtendedCommitment::decode(dec, gp))
            .collect::<Result<Vec<_>>>()?;
        let n = dec.get_len()?;
        let bit_proofs = (0..n)
            .map(|_| {
                Ok(BitProof {
                    a0: dec.get_element(gp)?,
                    a1: dec.get_element(gp)?,
                    e0: dec.get_scalar(gp)?,
                    e1: dec.get_scalar(gp)?,
                    z0: dec.get_scalar(gp)?,
                    z1: dec.get_scalar(gp)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(RangeProof {
            bit_commitments,
            bit_proofs,
            consistency_opening: dec.get_scalar(gp)?,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        self.encode(&mut enc);
        enc.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8], gp: &GroupParams) -> Result<Self> {
        let mut dec = Decoder::new(bytes);
        let p = Self::decode(&mut dec, gp)?;
        dec.finish()?;
        Ok(p)
    }
}

fn check_width(bits: u32, gp: &GroupParams) -> Result<()> {
    if bits == 0 || bits > gp.max_range_bits() {
        return Err(Error::Precondition(format!(
            "range width {bits} outside [1, {}] for this group",
            gp.max_range_bits()
        )));
    }
    Ok(())
}

pub fn prove_range(v: &Scalar, r: &Scalar, bits: u32, gp: &GroupParams) -> Result<RangeProof> {
    prove_range_in_context(v, r, bits, &[], gp)
}

/// Proves `v ∈ [0, 2^bits)` for `commit(v, r)`, binding `context` into every
/// challenge. Refuses out-of-range values.
pub fn prove_range_in_context(
    v: &Scalar,
    r: &Scalar,
    bits: u32,
    context: &[u8],
    gp: &GroupParams,
) -> Result<RangeProof> {
    check_width(bits, gp)?;
    if v.value().bits() > u64::from(bits) {
        return Err(Error::Precondition(format!(
            "value {} does not fit in {bits} bits",
            v.value()
        )));
    }
    let digits = (0..bits)
        .map(|j| u64::from(v.value().bit(u64::from(j))))
        .collect::<Vec<_>>();
    Ok(prove_digits(v, &digits, r, bits, context, gp))
}

/// Runs the honest prover without its precondition: the low `bits − 1`
/// digits are bits of `v` and the top digit carries the rest (`v >> (bits−1)`,
/// possibly ≥ 2). Exists only to exercise soundness.
#[doc(hidden)]
pub fn forge_range_proof_unchecked(v: &Scalar, r: &Scalar, bits: u32, context: &[u8], gp: &GroupParams) -> RangeProof {
    let top = v.value() >> (bits - 1);
    let top = top.to_u64_digits().first().copied().unwrap_or(0);
    let mut digits = (0..bits - 1)
        .map(|j| u64::from(v.value().bit(u64::from(j))))
        .collect::<Vec<_>>();
    digits.push(top);
    prove_digits(v, &digits, r, bits, context, gp)
}

#[allow(clippy::too_many_arguments)]
fn challenge(
    gp: &GroupParams,
    context: &[u8],
    bits: u32,
    j: u32,
    value: &ExtendedCommitment,
    bit: &ExtendedCommitment,
    a0: &GroupElement,
    a1: &GroupElement,
) -> Scalar {
    gp.hash_to_scalar(
        CHALLENGE_DOMAIN,
        &[
            context,
            &bits.to_be_bytes(),
            &j.to_be_bytes(),
            &value.c.value().to_bytes_be(),
            &value.mask_term.value().to_bytes_be(),
            &bit.c.value().to_bytes_be(),
            &bit.mask_term.value().to_bytes_be(),
            &a0.value().to_bytes_be(),
            &a1.value().to_bytes_be(),
        ],
    )
}

fn nonce_rng(v: &Scalar, r: &Scalar, bits: u32, context: &[u8]) -> ChaCha20Rng {
    let mut h = Sha256::new();
    h.update(NONCE_DOMAIN);
    for part in [
        &v.value().to_bytes_be()[..],
        &r.value().to_bytes_be(),
        &bits.to_be_bytes(),
        context,
    ] {
        h.update((part.len() as u32).to_be_bytes());
        h.update(part);
    }
    ChaCha20Rng::from_seed(h.finalize().into())
}

fn prove_digits(v: &Scalar, digits: &[u64], r: &Scalar, bits: u32, context: &[u8], gp: &GroupParams) -> RangeProof {
    let mut rng = nonce_rng(v, r, bits, context);
    let value = commit(v, r, gp);
    let g_inv = gp.g_inverse();

    let mut bit_commitments = Vec::with_capacity(digits.len());
    let mut bit_proofs = Vec::with_capacity(digits.len());
    let mut weighted_blinding = gp.zero();

    for (j, &digit) in digits.iter().enumerate() {
        let r_j = gp.random_scalar(&mut rng);
        weighted_blinding = gp.add(
            &weighted_blinding,
            &gp.mul_scalars(&r_j, &gp.reduce(&(BigUint::one() << j))),
        );
        let cj = commit(&gp.scalar(digit), &r_j, gp);
        // Y_0 = C_j (opens to 0), Y_1 = C_j / g (opens to 1).
        let ys = [cj.c.clone(), gp.mul(&cj.c, &g_inv)];
        let real = (digit & 1) as usize;
        let fake = 1 - real;

        let k = gp.random_scalar(&mut rng);
        let e_fake = gp.random_scalar(&mut rng);
        let z_fake = gp.random_scalar(&mut rng);
        let a_real = gp.h_pow(&k);
        let a_fake = gp.mul(&gp.h_pow(&z_fake), &gp.pow(&ys[fake], gp.neg(&e_fake).value()));
        let (a0, a1) = if real == 0 { (a_real, a_fake) } else { (a_fake, a_real) };
        let e = challenge(gp, context, bits, j as u32, &value, &cj, &a0, &a1);
        let e_real = gp.sub(&e, &e_fake);
        let z_real = gp.add(&k, &gp.mul_scalars(&e_real, &r_j));
        let (e0, e1, z0, z1) = if real == 0 {
            (e_real, e_fake, z_real, z_fake)
        } else {
            (e_fake, e_real, z_fake, z_real)
        };
        bit_proofs.push(BitProof { a0, a1, e0, e1, z0, z1 });
        bit_commitments.push(cj);
    }

    RangeProof {
        bit_commitments,
        bit_proofs,
        consistency_opening: gp.sub(r, &weighted_blinding),
    }
}

pub fn verify_range(commitment: &ExtendedCommitment, proof: &RangeProof, bits: u32, gp: &GroupParams) -> bool {
    verify_range_in_context(commitment, proof, bits, &[], gp)
}

pub fn verify_range_in_context(
    commitment: &ExtendedCommitment,
    proof: &RangeProof,
    bits: u32,
    context: &[u8],
    gp: &GroupParams,
) -> bool {
    if check_width(bits, gp).is_err()
        || proof.bit_commitments.len() != bits as usize
        || proof.bit_proofs.len() != bits as usize
        || !commitment.is_well_formed(gp)
    {
        return false;
    }
    let g_inv = gp.g_inverse();
    for (j, (cj, bp)) in proof.bit_commitments.iter().zip(&proof.bit_proofs).enumerate() {
        if !gp.is_member(&cj.c) {
            return false;
        }
        let e = challenge(gp, context, bits, j as u32, commitment, cj, &bp.a0, &bp.a1);
        if gp.add(&bp.e0, &bp.e1) != e {
            return false;
        }
        let y1 = gp.mul(&cj.c, &g_inv);
        let lhs0 = gp.h_pow(&bp.z0);
        let rhs0 = gp.mul(&bp.a0, &gp.pow(&cj.c, bp.e0.value()));
        if lhs0 != rhs0 {
            return false;
        }
        let lhs1 = gp.h_pow(&bp.z1);
        let rhs1 = gp.mul(&bp.a1, &gp.pow(&y1, bp.e1.value()));
        if lhs1 != rhs1 {
            return false;
        }
    }

    // Horner: Π X_j^{2^j} from the top bit down.
    let recombine = |pick: &dyn Fn(&ExtendedCommitment) -> &GroupElement| {
        let mut acc = gp.identity();
        for cj in proof.bit_commitments.iter().rev() {
            acc = gp.mul(&gp.mul(&acc, &acc), pick(cj));
        }
        acc
    };
    let z = &proof.consistency_opening;
    let c = gp.mul(&recombine(&|x| &x.c), &gp.h_pow(z));
    let m = gp.mul(&recombine(&|x| &x.mask_term), &gp.g_pow(z));
    c == commitment.c && m == commitment.mask_term
}
