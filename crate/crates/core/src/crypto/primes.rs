//! Miller–Rabin primality testing and deterministic Schnorr-group generation.

use num_bigint::BigUint;
use num_integer::Integer;
use num_traits::{One, Zero};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

const SMALL_PRIMES: [u32; 54] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97, 101, 103, 107, 109,
    113, 127, 131, 137, 139, 149, 151, 157, 163, 167, 173, 179, 181, 191, 193, 197, 199, 211, 223, 227, 229, 233, 239,
    241, 251,
];

/// Probabilistic primality test with `rounds` random bases.
///
/// Bases come from a ChaCha stream keyed by `n`, so the verdict for a given
/// `(n, rounds)` is reproducible.
pub fn is_probable_prime(n: &BigUint, rounds: u32) -> bool {
    let two = BigUint::from(2u32);
    if *n < two {
        return false;
    }
    for &sp in SMALL_PRIMES.iter() {
        let sp = BigUint::from(sp);
        if *n == sp {
            return true;
        }
        if (n % &sp).is_zero() {
            return false;
        }
    }

    let n_minus_1 = n - 1u32;
    let s = n_minus_1.trailing_zeros().unwrap_or(0);
    let d = &n_minus_1 >> s;

    let mut seed = [0u8; 32];
    seed.copy_from_slice(&Sha256::digest(n.to_bytes_be()));
    let mut rng = ChaCha8Rng::from_seed(seed);

    'witness: for _ in 0..rounds {
        let a = &two + random_below(&mut rng, &(&n_minus_1 - &two));
        let mut x = a.modpow(&d, n);
        if x.is_one() || x == n_minus_1 {
            continue;
        }
        for _ in 1..s {
            x = (&x * &x) % n;
            if x == n_minus_1 {
                continue 'witness;
            }
            if x.is_one() {
                return false;
            }
        }
        return false;
    }
    true
}

/// Uniform integer in `[0, bound)` by rejection sampling on `bits(bound)` bits.
pub fn random_below<R: RngCore + ?Sized>(rng: &mut R, bound: &BigUint) -> BigUint {
    assert!(!bound.is_zero(), "empty range");
    let bits = bound.bits();
    let nbytes = bits.div_ceil(8) as usize;
    let excess = nbytes as u64 * 8 - bits;
    let mut buf = vec![0u8; nbytes];
    loop {
        rng.fill_bytes(&mut buf);
        let x = BigUint::from_bytes_be(&buf) >> excess;
        if x < *bound {
            return x;
        }
    }
}

/// `bits`-bit integer drawn from a SHA-256 counter stream over `label`, with
/// the top bit forced on.
pub fn hash_bits(label: &[u8], bits: u64) -> BigUint {
    let nbytes = bits.div_ceil(8) as usize;
    let mut out = Vec::with_capacity(nbytes + 32);
    let mut counter = 0u32;
    while out.len() < nbytes {
        let mut h = Sha256::new();
        h.update(label);
        h.update(counter.to_be_bytes());
        out.extend_from_slice(&h.finalize());
        counter += 1;
    }
    out.truncate(nbytes);
    let mut x = BigUint::from_bytes_be(&out);
    let excess = nbytes as u64 * 8 - bits;
    x >>= excess;
    x.set_bit(bits - 1, true);
    x
}

/// Deterministically derive `(p, q, g)` with `q` a `q_bits` prime, `p = 2kq + 1`
/// a `p_bits` prime and `g = 2^((p-1)/q)` of order `q`.
pub fn generate_schnorr_group(label: &str, p_bits: u64, q_bits: u64) -> (BigUint, BigUint, BigUint) {
    let mut q = hash_bits(format!("{label}/q").as_bytes(), q_bits);
    q.set_bit(0, true);
    while !is_probable_prime(&q, 64) {
        q += 2u32;
    }

    // k ∈ [k_min, 2·k_min) keeps p = 2kq + 1 at exactly p_bits bits.
    let two_q = &q << 1;
    let k_min = (BigUint::one() << (p_bits - 1)) / &two_q + 1u32;
    let mut k = &k_min + hash_bits(format!("{label}/k").as_bytes(), p_bits) % &k_min;
    let p = loop {
        let candidate: BigUint = &k * &two_q + 1u32;
        if candidate.bits() == p_bits && is_probable_prime(&candidate, 64) {
            break candidate;
        }
        k += 1u32;
    };

    let cofactor = (&p - 1u32).div_floor(&q);
    let mut base = BigUint::from(2u32);
    let g = loop {
        let g = base.modpow(&cofactor, &p);
        if !g.is_one() {
            break g;
        }
        base += 1u32;
    };
    (p, q, g)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_numbers_classified() {
        let primes: Vec<u32> = (0..200u32)
            .filter(|&n| is_probable_prime(&BigUint::from(n), 16))
            .collect();
        let oracle: Vec<u32> = (0..200u32)
            .filter(|&n| n >= 2 && (2..n).take_while(|d| d * d <= n).all(|d| n % d != 0))
            .collect();
        assert_eq!(primes, oracle);
    }

    #[test]
    fn carmichael_numbers_rejected() {
        for n in [561u32, 1105, 1729, 2465, 2821, 6601, 8911, 41041, 825265] {
            assert!(!is_probable_prime(&BigUint::from(n), 32), "{n}");
        }
    }

    #[test]
    fn mersenne_prime_accepted() {
        let m127 = (BigUint::one() << 127u32) - 1u32;
        assert!(is_probable_prime(&m127, 64));
        assert!(!is_probable_prime(&((BigUint::one() << 128u32) - 1u32), 64));
    }

    #[test]
    fn hash_bits_has_exact_width() {
        for bits in [8u64, 13, 160, 257] {
            assert_eq!(hash_bits(b"x", bits).bits(), bits);
        }
    }

    #[test]
    fn small_generated_group_is_well_formed() {
        let (p, q, g) = generate_schnorr_group("unit", 128, 40);
        assert_eq!(p.bits(), 128);
        assert_eq!(q.bits(), 40);
        assert!(((&p - 1u32) % &q).is_zero());
        assert!(g.modpow(&q, &p).is_one());
        assert!(!g.is_one());
    }
}
