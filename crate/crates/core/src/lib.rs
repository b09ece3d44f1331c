//! Numerical laboratory for the random conductance model on periodic lattices.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod elliptic;
pub mod environment;
pub mod error;
pub mod fieldio;
pub mod lattice;
pub mod numeric;
pub mod parabolic;
pub mod runner;
pub mod seed;
pub mod series;
pub mod solver;
pub mod stats;
pub mod walk;

pub use error::{Error, Result};
