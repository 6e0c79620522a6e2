//! Pedersen commitments `c = g^m h^r` extended with the mask term `g^r`.
//!
//! The mask term lets the server check that the blinding scalars of a set of
//! commitments sum to a published decoding key without learning them.

use super::codec::{Decoder, Encoder};
use super::group::{GroupElement, GroupParams, Scalar};
use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ExtendedCommitment {
    pub c: GroupElement,
    pub mask_term: GroupElement,
}

impl ExtendedCommitment {
    pub fn identity(gp: &GroupParams) -> Self {
        ExtendedCommitment {
            c: gp.identity(),
            mask_term: gp.identity(),
        }
    }

    pub fn encode(&self, enc: &mut Encoder) {
        enc.put_element(&self.c);
        enc.put_element(&self.mask_term);
    }

    pub fn decode(dec: &mut Decoder<'_>, gp: &GroupParams) -> Result<Self> {
        Ok(ExtendedCommitment {
            c: dec.get_element(gp)?,
            mask_term: dec.get_element(gp)?,
        })
    }

    pub fn is_well_formed(&self, gp: &GroupParams) -> bool {
        gp.is_member(&self.c) && gp.is_member(&self.mask_term)
    }
}

pub fn commit(m: &Scalar, r: &Scalar, gp: &GroupParams) -> ExtendedCommitment {
    ExtendedCommitment {
        c: gp.mul(&gp.g_pow(m), &gp.h_pow(r)),
        mask_term: gp.g_pow(r),
    }
}

/// Componentwise product; the empty product is the identity commitment.
pub fn add_commitments<'a>(
    items: impl IntoIterator<Item = &'a ExtendedCommitment>,
    gp: &GroupParams,
) -> ExtendedCommitment {
    let mut acc = ExtendedCommitment::identity(gp);
    for x in items {
        acc.c = gp.mul(&acc.c, &x.c);
        acc.mask_term = gp.mul(&acc.mask_term, &x.mask_term);
    }
    acc
}

/// `Π mask_term_i == g^decoding_key`.
pub fn verify_mask_sum<'a>(
    items: impl IntoIterator<Item = &'a ExtendedCommitment>,
    decoding_key: &Scalar,
    gp: &GroupParams,
) -> bool {
    let product = gp.product(items.into_iter().map(|x| &x.mask_term));
    product == gp.g_pow(decoding_key)
}
