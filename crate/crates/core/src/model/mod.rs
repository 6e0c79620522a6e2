//! Parameter vectors, fixed-point encoding, the classifier and its data.

pub mod data;
pub mod net;
pub mod quant;
pub mod train;
pub mod vector;

pub use data::{gen_synthetic, split_iid, Dataset, SyntheticSpec};
pub use net::{backdoor_eval, class_backdoor_eval, evaluate, Architecture, ModelSpec};
pub use quant::{FixedVec, Quantizer};
pub use train::{local_train, TrainConfig};
pub use vector::{clip_to_norm, p_norm, Norm, ParameterVector};
