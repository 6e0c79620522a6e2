#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aggregators;
pub mod attacks;
pub mod crypto;
pub mod error;
pub mod exec;
pub mod model;
pub mod secagg;
pub mod seed;
pub mod sim;

pub use error::{Error, Result};
