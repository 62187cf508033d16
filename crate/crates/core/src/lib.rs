//! Numerics for Birkhoff sums of interval maps: exact-preimage Ulam transfer
//! operators, the inverse-branch kernel, φ-mixing coefficients, Monte Carlo
//! ensembles, the martingale–coboundary decomposition and a diagonal Gaussian
//! coupling harness.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod coupling;
pub mod error;
pub mod fit;
pub mod grid;
pub mod maps;
pub mod martingale;
pub mod observables;
pub mod quad;
pub mod rng;
pub mod statistics;
pub mod transfer;

pub use error::{Error, Result};
