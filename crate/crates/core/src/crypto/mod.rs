//! Group arithmetic, extended Pedersen commitments and bit-decomposition
//! range proofs.

pub mod codec;
pub mod commit;
pub mod group;
pub mod primes;
pub mod range;

pub use group::{setup_group, GroupElement, GroupParams, GroupProfile, Scalar};
