//! Truncated Euler-Maruyama simulation of a delay Ait-Sahalia-type short-rate
//! model with Poisson jumps, plus the Monte Carlo tooling around it: moment
//! and strong-error estimation on coupled paths, and bond / barrier option
//! valuation.

// `!(x > 0.0)` is used on purpose throughout: it rejects NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod error;
pub mod experiment;
pub mod model;
pub mod path_engine;
pub mod pricing;
pub mod stats;
pub mod truncation;

pub use error::{Error, Result};
pub use model::{InitialSegment, ModelParams, VolatilityFunction};
pub use path_engine::{GridSpec, Model, NoiseStream, Scheme, SimPath};
pub use truncation::{ClampBounds, TruncationRule};
