//! Bayesian multi-sensor sequential change detection when the order in which
//! sensors witness the change is unknown.
//!
//! The crate is `no_std` (it needs `alloc`). Everything here is a pure
//! computation over caller-owned random streams; the Monte Carlo engine, file
//! formats and command line live in the `mscd` crate.
//!
//! Layout:
//! - [`model`]: change-propagation model, scenario sampling, likelihood ratios.
//! - [`quantizer`]: monotone likelihood-ratio quantizers and their K-L design.
//! - [`lcsh`]: level-crossing sampling with hysteresis (encoder, decoder, bits).
//! - [`stats`]: transformed sufficient statistics and their log-domain recursion.
//! - [`detectors`]: uniform-prior, multichart and estimation-based stopping rules
//!   plus the known-pattern, mismatched and single-sensor baselines.
//! - [`dp`]: grid value iteration for the Bayes-optimal rule on small networks.

#![no_std]
// Negated comparisons reject NaN parameters; index loops mirror the recursions.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;

#[cfg(test)]
#[macro_use]
extern crate std;

pub mod detectors;
pub mod dp;
mod error;
pub mod lcsh;
pub mod model;
pub mod quantizer;
pub mod special;
pub mod stats;

pub use error::{Error, Result};
