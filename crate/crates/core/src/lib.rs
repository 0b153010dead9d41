//! Metropolis-Hastings with AR(1) proposals viewed as matrix splittings.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod experiment;
pub mod error;
pub mod families;
pub mod linalg;
pub mod rng;
pub mod sampler;
pub mod splitting;
pub mod target;
pub mod theory;

pub use error::{Error, Result};
