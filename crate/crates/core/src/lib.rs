//! Brownian last passage percolation, Pitman and Skorokhod reflection systems,
//! Warren's determinantal transition densities, and the numerical checks that
//! tie them together.

// `!(x > 0.0)` is used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod densities;
pub mod error;
pub mod exec;
pub mod harness;
pub mod linalg;
pub mod logreal;
pub mod lpp;
pub mod paths;
pub mod quad;
pub mod reflect;
pub mod special;
pub mod stats;
pub mod suites;

pub use error::{Error, Result};
pub use logreal::LogReal;
pub use paths::{make_grid, Ensemble, RngSpec, SampledPath, TimeGrid};
