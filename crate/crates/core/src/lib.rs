//! Tailored principal component monitoring of high-dimensional data streams.
//!
//! The crate covers the full offline and online pipeline: estimating the
//! pre-change correlation structure, choosing the principal axes most
//! sensitive to a distribution of anticipated changes, running a
//! mixture-likelihood change detector over the chosen projections,
//! calibrating its alarm threshold, and evaluating detection performance.

pub mod error;
pub mod matrix_serde;
pub mod rng;

pub mod corrcore;
pub mod changemodel;
pub mod tailor;
pub mod mixmonitor;
pub mod calibrate;
pub mod evalharness;

pub use error::{Error, Result};
