//! Prime-order subgroup arithmetic modulo a prime `p`.
//!
//! Every profile is a Schnorr group: `q | p - 1`, `g` and `h` of order `q`.
//! `g` and `h` get 8-bit fixed-base tables on first use since nearly every
//! exponentiation in the protocol is over one of them.

use std::fmt;
use std::sync::{Arc, OnceLock};

use num_bigint::BigUint;
use num_integer::Integer;
use num_traits::{One, Zero};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::primes;

/// Domain separator for deriving `h` from `g`; nobody knows `log_g(h)`.
pub const H_DERIVATION_TAG: &[u8] = b"rofl-lab-h";

/// Hash used for Fiat–Shamir challenges, seeds and mask expansion.
pub const HASH_NAME: &str = "sha256";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupProfile {
    /// p = 23, q = 11, g = 2, h = 3. Toy-grade binding only.
    Test,
    /// 1024-bit p, 160-bit q. Fast enough for multi-round crypto runs.
    Compact,
    /// 2048-bit p, 256-bit q.
    Standard,
}

impl GroupProfile {
    pub const ALL: [GroupProfile; 3] = [GroupProfile::Test, GroupProfile::Compact, GroupProfile::Standard];

    pub fn id(self) -> u8 {
        match self {
            GroupProfile::Test => 1,
            GroupProfile::Compact => 2,
            GroupProfile::Standard => 3,
        }
    }

    pub fn from_id(id: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.id() == id)
    }

    pub fn name(self) -> &'static str {
        match self {
            GroupProfile::Test => "test",
            GroupProfile::Compact => "compact",
            GroupProfile::Standard => "standard",
        }
    }

    /// Label fed to [`primes::generate_schnorr_group`] for the published
    /// constants below.
    pub fn generation_label(self) -> Option<(&'static str, u64, u64)> {
        match self {
            GroupProfile::Test => None,
            GroupProfile::Compact => Some(("sybil-lab/group/compact/v1", 1024, 160)),
            GroupProfile::Standard => Some(("sybil-lab/group/standard/v1", 2048, 256)),
        }
    }
}

impl fmt::Display for GroupProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

// Output of `generate_schnorr_group` for the labels above (checked by tests).
const COMPACT_P: &str = concat!(
    "be00a162fa285736a29d34f97e16d20319bf6b6d9cd6111930f8ef26fc3a20ec",
    "ceef97aa254f04ba047529feb3b2a48977d71cc27ef077b6252ddd1e4e2f6036",
    "d27268061af59310654180ce4f5366aa26c02bea2d413211430bd66ed5c98b56",
    "fdc576e089c1f411f820a58370cac521738ed453136482695ab676d51b12151f",
);
const COMPACT_Q: &str = "87f16c224dd02bf288d1aba73ef9c76b7f15a585";
const COMPACT_G: &str = concat!(
    "ae4b665023864d54b182d40f0415a0607b6dfebd25b14e5457a0110f00f9fe89",
    "ba081b9ced2e14a8b5fe888ee279eeffc4851bbd4b10a4cf799f3fc712ca594e",
    "0e530a8c95b80fb88c7b70d799fb1f3af3371262b75fc8dc5abdce1a25f60999",
    "a876df8e7a0101961c70736c47a9af314cf916970b0716e5b1c40aa009b9be07",
);
const STANDARD_P: &str = concat!(
    "dd67101bb15fb4757ae209859f5c8dac8620ec9dde2be940e742ea17114ecca4",
    "e05a7561508a926ef0514d423e735afd8580823dd0c4b5aae09f6c991f74a0e2",
    "0913453892948cc6692adef00a505c0ecc7e2a6019f8f707af6fa5efb1847c3a",
    "03a30b4a65d7ed0a9907fe06b6a01b08fe5fce9e56dfd3b81c9c5f316a9a9c20",
    "2e683836119d8459bdda5444a3d35bb96795ec174d8e40d8a95fdd68ad4eba0d",
    "cb730380eb9cf6e01a2d72f45465de1c32887935db98c3780804eb13ab98d4be",
    "89cbcb012e0e075461c13c49d086c435ba4da5db1d108b2e0883dd6f729bee34",
    "99ff8377c8cab116f1a6ed3649bb76a9ceced5d2d153096ae0f622fc73e32b99",
);
const STANDARD_Q: &str = "f74fd81579855fa8c6344b34801b899ef9653ef6fd0341074289302fa697a62d";
const STANDARD_G: &str = concat!(
    "cdb008e2bc667e596616ca5ada384a38f0314a9eb73d98956e660dc8bdfe3cba",
    "b01e1c67ba68095eb8941affc8c9cd1f8b8f10b808ff07b8c635c56e60da0e06",
    "5bf912599dadc2c9f6e8362aa43b06804a9ef9367f8983309ce2bb98a002222e",
    "3618c69a7a3946e4b678f85c9c2e7cacdea96cc5ecc69c63992b4eab7e1cefdb",
    "6084e50d0e68e57325a09db2dd075ad42a48b10279710ffd24945354ab735267",
    "6a01ebf6b0b48f4266f3863d517735381d9dd01bc04d67fa0f9ffa81d827fce8",
    "7c2cbe28a38dad4e58b5cd804e10f7b142d6d335095c325e504638ee5cf1286c",
    "0868495d1421e5c1e614ad555439f11ccaf8e11dcd039556e31892336d6b08ae",
);

/// Integer modulo `q`; always reduced.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Scalar(BigUint);

impl Scalar {
    pub fn value(&self) -> &BigUint {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    pub fn to_u64(&self) -> Option<u64> {
        let digits = self.0.to_u64_digits();
        match digits.len() {
            0 => Some(0),
            1 => Some(digits[0]),
            _ => None,
        }
    }
}

/// Element of the order-`q` subgroup of `Z_p^*`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct GroupElement(BigUint);

impl GroupElement {
    pub fn value(&self) -> &BigUint {
        &self.0
    }
}

struct FixedBase {
    rows: Vec<Vec<BigUint>>,
}

impl FixedBase {
    fn new(base: &BigUint, p: &BigUint, exp_bits: u64) -> Self {
        let nrows = exp_bits.div_ceil(8).max(1) as usize;
        let mut rows = Vec::with_capacity(nrows);
        let mut unit = base.clone();
        for _ in 0..nrows {
            let mut row = Vec::with_capacity(256);
            row.push(BigUint::one());
            for j in 1..256 {
                let next = (&row[j - 1] * &unit) % p;
                row.push(next);
            }
            unit = (&row[255] * &unit) % p;
            rows.push(row);
        }
        FixedBase { rows }
    }

    fn pow(&self, e: &BigUint, p: &BigUint) -> BigUint {
        let mut acc = BigUint::one();
        for (i, byte) in e.to_bytes_le().into_iter().enumerate() {
            if byte != 0 {
                acc = (acc * &self.rows[i][byte as usize]) % p;
            }
        }
        acc
    }
}

pub struct GroupParams {
    profile: GroupProfile,
    p: BigUint,
    q: BigUint,
    g: BigUint,
    h: BigUint,
    g_inv: BigUint,
    cofactor: BigUint,
    tables: OnceLock<(FixedBase, FixedBase)>,
}

impl fmt::Debug for GroupParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GroupParams")
            .field("profile", &self.profile)
            .field("p_bits", &self.p.bits())
            .field("q_bits", &self.q.bits())
            .finish()
    }
}

fn parse_hex(s: &str) -> BigUint {
    BigUint::parse_bytes(s.as_bytes(), 16).expect("valid hex constant")
}

/// Hash `tag ‖ g` onto the order-`q` subgroup.
pub fn derive_h(p: &BigUint, q: &BigUint, g: &BigUint) -> BigUint {
    let cofactor = (p - 1u32).div_floor(q);
    let width = p.bits() + 128;
    let mut counter = 0u32;
    loop {
        let mut label = H_DERIVATION_TAG.to_vec();
        label.extend_from_slice(&g.to_bytes_be());
        label.extend_from_slice(&counter.to_be_bytes());
        let x = primes::hash_bits(&label, width) % p;
        let h = x.modpow(&cofactor, p);
        if !h.is_one() && !h.is_zero() {
            return h;
        }
        counter += 1;
    }
}

impl GroupParams {
    fn build(profile: GroupProfile, p: BigUint, q: BigUint, g: BigUint, h: BigUint) -> Self {
        let g_inv = g.modpow(&(&p - 2u32), &p);
        let cofactor = (&p - 1u32).div_floor(&q);
        GroupParams {
            profile,
            p,
            q,
            g,
            h,
            g_inv,
            cofactor,
            tables: OnceLock::new(),
        }
    }

    fn for_profile(profile: GroupProfile) -> Self {
        match profile {
            GroupProfile::Test => Self::build(
                profile,
                BigUint::from(23u32),
                BigUint::from(11u32),
                BigUint::from(2u32),
                BigUint::from(3u32),
            ),
            GroupProfile::Compact | GroupProfile::Standard => {
                let (p, q, g) = if profile == GroupProfile::Compact {
                    (parse_hex(COMPACT_P), parse_hex(COMPACT_Q), parse_hex(COMPACT_G))
                } else {
                    (parse_hex(STANDARD_P), parse_hex(STANDARD_Q), parse_hex(STANDARD_G))
                };
                let h = derive_h(&p, &q, &g);
                Self::build(profile, p, q, g, h)
            }
        }
    }

    pub fn profile(&self) -> GroupProfile {
        self.profile
    }
    pub fn p(&self) -> &BigUint {
        &self.p
    }
    pub fn q(&self) -> &BigUint {
        &self.q
    }
    pub fn g(&self) -> GroupElement {
        GroupElement(self.g.clone())
    }
    pub fn h(&self) -> GroupElement {
        GroupElement(self.h.clone())
    }
    pub fn g_inverse(&self) -> GroupElement {
        GroupElement(self.g_inv.clone())
    }
    pub fn cofactor(&self) -> &BigUint {
        &self.cofactor
    }

    /// Byte width of a group element.
    pub fn element_len(&self) -> usize {
        self.p.bits().div_ceil(8) as usize
    }

    /// Byte width of a scalar.
    pub fn scalar_len(&self) -> usize {
        self.q.bits().div_ceil(8) as usize
    }

    /// Largest range-proof bit width with `2^bits <= q`.
    pub fn max_range_bits(&self) -> u32 {
        (self.q.bits() - 1) as u32
    }

    fn tables(&self) -> &(FixedBase, FixedBase) {
        self.tables.get_or_init(|| {
            let bits = self.q.bits();
            (
                FixedBase::new(&self.g, &self.p, bits),
                FixedBase::new(&self.h, &self.p, bits),
            )
        })
    }

    // ---- scalars ----

    pub fn scalar(&self, v: u64) -> Scalar {
        Scalar(BigUint::from(v) % &self.q)
    }

    pub fn scalar_from_i64(&self, v: i64) -> Scalar {
        let s = self.scalar(v.unsigned_abs());
        if v < 0 {
            self.neg(&s)
        } else {
            s
        }
    }

    pub fn reduce(&self, v: &BigUint) -> Scalar {
        Scalar(v % &self.q)
    }

    /// `Some` only for canonical encodings (`v < q`).
    pub fn scalar_checked(&self, v: BigUint) -> Option<Scalar> {
        (v < self.q).then_some(Scalar(v))
    }

    pub fn zero(&self) -> Scalar {
        Scalar(BigUint::zero())
    }

    pub fn add(&self, a: &Scalar, b: &Scalar) -> Scalar {
        Scalar((&a.0 + &b.0) % &self.q)
    }

    pub fn sub(&self, a: &Scalar, b: &Scalar) -> Scalar {
        Scalar((&a.0 + &self.q - &b.0) % &self.q)
    }

    pub fn neg(&self, a: &Scalar) -> Scalar {
        Scalar((&self.q - &a.0) % &self.q)
    }

    pub fn mul_scalars(&self, a: &Scalar, b: &Scalar) -> Scalar {
        Scalar((&a.0 * &b.0) % &self.q)
    }

    pub fn sum_scalars<'a>(&self, it: impl IntoIterator<Item = &'a Scalar>) -> Scalar {
        let mut acc = BigUint::zero();
        for s in it {
            acc += &s.0;
        }
        Scalar(acc % &self.q)
    }

    pub fn random_scalar<R: RngCore + ?Sized>(&self, rng: &mut R) -> Scalar {
        Scalar(primes::random_below(rng, &self.q))
    }

    /// Wide (512-bit) hash reduced mod `q`. Each part is length-prefixed.
    pub fn hash_to_scalar(&self, domain: &[u8], parts: &[&[u8]]) -> Scalar {
        let mut wide = Vec::with_capacity(64);
        for block in 0u8..2 {
            let mut h = Sha256::new();
            h.update(domain);
            h.update([block]);
            for part in parts {
                h.update((part.len() as u32).to_be_bytes());
                h.update(part);
            }
            wide.extend_from_slice(&h.finalize());
        }
        Scalar(BigUint::from_bytes_be(&wide) % &self.q)
    }

    // ---- group elements ----

    pub fn identity(&self) -> GroupElement {
        GroupElement(BigUint::one())
    }

    pub fn g_pow(&self, e: &Scalar) -> GroupElement {
        GroupElement(self.tables().0.pow(&e.0, &self.p))
    }

    pub fn h_pow(&self, e: &Scalar) -> GroupElement {
        GroupElement(self.tables().1.pow(&e.0, &self.p))
    }

    pub fn pow(&self, base: &GroupElement, e: &BigUint) -> GroupElement {
        GroupElement(base.0.modpow(e, &self.p))
    }

    pub fn mul(&self, a: &GroupElement, b: &GroupElement) -> GroupElement {
        GroupElement((&a.0 * &b.0) % &self.p)
    }

    pub fn inv(&self, a: &GroupElement) -> GroupElement {
        // Order-q elements: a^-1 = a^(q-1).
        GroupElement(a.0.modpow(&(&self.q - 1u32), &self.p))
    }

    pub fn product<'a>(&self, it: impl IntoIterator<Item = &'a GroupElement>) -> GroupElement {
        let mut acc = BigUint::one();
        for x in it {
            acc = (acc * &x.0) % &self.p;
        }
        GroupElement(acc)
    }

    /// `x ∈ [1, p)` and `x^q ≡ 1 (mod p)`.
    pub fn is_member(&self, x: &GroupElement) -> bool {
        !x.0.is_zero() && x.0 < self.p && x.0.modpow(&self.q, &self.p).is_one()
    }

    /// Range check only (`1 <= v < p`); subgroup membership is left to the
    /// verifier that consumes the element.
    pub fn element_checked(&self, v: BigUint) -> Option<GroupElement> {
        (!v.is_zero() && v < self.p).then_some(GroupElement(v))
    }

    /// Bypasses every check. Test and forgery helpers only.
    #[doc(hidden)]
    pub fn element_unchecked(&self, v: BigUint) -> GroupElement {
        GroupElement(v % &self.p)
    }
}

static TEST: OnceLock<Arc<GroupParams>> = OnceLock::new();
static COMPACT: OnceLock<Arc<GroupParams>> = OnceLock::new();
static STANDARD: OnceLock<Arc<GroupParams>> = OnceLock::new();

/// Published parameters for `profile`; built once per process.
pub fn setup_group(profile: GroupProfile) -> Arc<GroupParams> {
    let cell = match profile {
        GroupProfile::Test => &TEST,
        GroupProfile::Compact => &COMPACT,
        GroupProfile::Standard => &STANDARD,
    };
    cell.get_or_init(|| Arc::new(GroupParams::for_profile(profile))).clone()
}
