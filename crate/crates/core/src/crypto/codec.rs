//! Length-prefixed big-endian wire encoding.
//!
//! | item          | encoding                                              |
//! |---------------|-------------------------------------------------------|
//! | `u8/u32/u64`  | fixed-width big-endian                                |
//! | `f64`         | IEEE-754 bits as big-endian `u64`                     |
//! | byte string   | `u32` length, then the bytes                          |
//! | integer       | `u32` length, then minimal big-endian magnitude (zero is length 0, no leading zero bytes) |
//! | scalar        | integer, must be `< q`                                |
//! | group element | integer, must lie in `[1, p)`                         |
//! | list          | `u32` count, then the items                           |
//!
//! Decoding rejects non-canonical integers and trailing bytes, so every value
//! has exactly one encoding.

use num_bigint::BigUint;
use num_traits::Zero;

use super::group::{GroupElement, GroupParams, Scalar};
use crate::error::{Error, Result};

/// Upper bound on any decoded list length; guards allocations.
pub const MAX_LIST_LEN: usize = 1 << 24;

#[derive(Default)]
pub struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn put_u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn put_u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }

    pub fn put_u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }

    pub fn put_f64(&mut self, v: f64) {
        self.put_u64(v.to_bits());
    }

    pub fn put_len(&mut self, n: usize) {
        self.put_u32(u32::try_from(n).expect("length fits in u32"));
    }

    pub fn put_bytes(&mut self, b: &[u8]) {
        self.put_len(b.len());
        self.buf.extend_from_slice(b);
    }

    pub fn put_biguint(&mut self, v: &BigUint) {
        if v.is_zero() {
            self.put_u32(0);
        } else {
            self.put_bytes(&v.to_bytes_be());
        }
    }

    pub fn put_scalar(&mut self, s: &Scalar) {
        self.put_biguint(s.value());
    }

    pub fn put_element(&mut self, x: &GroupElement) {
        self.put_biguint(x.value());
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }
}

pub struct Decoder<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Decoder { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Decode(format!("truncated input at byte {}", self.pos)))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub fn get_u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn get_u32(&mut self) -> Result<u32> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn get_u64(&mut self) -> Result<u64> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn get_f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.get_u64()?))
    }

    pub fn get_len(&mut self) -> Result<usize> {
        let n = self.get_u32()? as usize;
        if n > MAX_LIST_LEN {
            return Err(Error::Decode(format!("length {n} exceeds limit")));
        }
        Ok(n)
    }

    pub fn get_bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.get_len()?;
        self.take(n)
    }

    pub fn get_biguint(&mut self) -> Result<BigUint> {
        let b = self.get_bytes()?;
        if b.first() == Some(&0) {
            return Err(Error::Decode("non-canonical integer (leading zero)".into()));
        }
        Ok(BigUint::from_bytes_be(b))
    }

    pub fn get_scalar(&mut self, gp: &GroupParams) -> Result<Scalar> {
        let v = self.get_biguint()?;
        gp.scalar_checked(v)
            .ok_or_else(|| Error::Decode("scalar not reduced mod q".into()))
    }

    pub fn get_element(&mut self, gp: &GroupParams) -> Result<GroupElement> {
        let v = self.get_biguint()?;
        gp.element_checked(v)
            .ok_or_else(|| Error::Decode("group element outside [1, p)".into()))
    }

    pub fn is_empty(&self) -> bool {
        self.pos == self.buf.len()
    }

    pub fn finish(self) -> Result<()> {
        if self.is_empty() {
            Ok(())
        } else {
            Err(Error::Decode(format!("{} trailing bytes", self.buf.len() - self.pos)))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{setup_group, GroupProfile};
    use proptest::prelude::*;

    #[test]
    fn integers_are_canonical() {
        let mut e = Encoder::new();
        e.put_biguint(&BigUint::zero());
        e.put_biguint(&BigUint::from(258u32));
        let bytes = e.into_bytes();
        assert_eq!(bytes, vec![0, 0, 0, 0, 0, 0, 0, 2, 1, 2]);

        let mut d = Decoder::new(&[0, 0, 0, 2, 0, 5]);
        assert!(d.get_biguint().is_err());
    }

    #[test]
    fn elements_and_scalars_are_range_checked() {
        let gp = setup_group(GroupProfile::Test);
        let mut e = Encoder::new();
        e.put_biguint(&BigUint::from(11u32));
        e.put_biguint(&BigUint::from(23u32));
        let bytes = e.into_bytes();
        let mut d = Decoder::new(&bytes);
        assert!(d.get_scalar(&gp).is_err());
        assert!(d.get_element(&gp).is_err());
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut d = Decoder::new(&[0, 0, 0, 1, 9]);
        assert_eq!(d.get_u32().unwrap(), 1);
        assert!(d.finish().is_err());
    }

    proptest! {
        #[test]
        fn biguint_roundtrip(bytes in proptest::collection::vec(any::<u8>(), 0..80), tail in any::<u64>()) {
            let v = BigUint::from_bytes_be(&bytes);
            let mut e = Encoder::new();
            e.put_biguint(&v);
            e.put_u64(tail);
            let buf = e.into_bytes();
            let mut d = Decoder::new(&buf);
            prop_assert_eq!(d.get_biguint().unwrap(), v);
            prop_assert_eq!(d.get_u64().unwrap(), tail);
            prop_assert!(d.finish().is_ok());
        }
    }
}
