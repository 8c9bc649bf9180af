// NaN must fail validation, hence `!(x > 0)` style checks
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod corridor;
mod error;
pub mod forward_sim;
pub mod laws;
pub mod par;
pub mod quad;
pub mod real;
pub mod rng;
pub mod spine;
pub mod stats;
pub mod tail;

pub use error::{Error, Result};

/// Double-precision instances of the generic corridor types.
pub type Band = corridor::KnotBand<f64>;
pub type CorridorSpec = corridor::CorridorSpec<f64>;
pub type CorridorProbability = corridor::CorridorProbability<f64>;
pub type ExponentFit = corridor::ExponentFit<f64>;
pub type Scaling = corridor::Scaling<f64>;
pub type Walk = corridor::Walk<f64>;
pub type Mark = corridor::Mark<f64>;
