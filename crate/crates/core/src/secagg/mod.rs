//! Pairwise-masked secure aggregation with per-coordinate commitments and
//! range proofs.

pub mod envelope;
pub mod keys;
pub mod mask;
pub mod round;
pub mod transcript;

pub use envelope::{build_envelope, verify_envelope, ClientEnvelope, RangePolicy, RejectReason, Verdict};
pub use keys::{ClientId, ClientKeys, KeyRegistry, MaskSeed};
pub use mask::{compute_client_mask, mask_update, subset_decoding_key, MaskVector, MaskedUpdate};
pub use round::{aggregate_envelopes, AggregateSum, SecureAggRound};
pub use transcript::{Outcome, ReverifyReport, RoundTranscript};
