//! Split-conformal prediction with data-dependent weights.
//!
//! The crate is organised around one primitive: a weighted empirical
//! distribution of calibration scores with a point mass at infinity, whose
//! generalized-inverse quantile yields a prediction region threshold. On top
//! of that sit score/weight catalogues for covariate shift and localized
//! calibration, an empirical-likelihood lack-of-fit criterion for method
//! selection, community-conditional calibration on graphs, two-layer
//! hierarchical calibration, and a deterministic synthetic-data harness with
//! analytic conditional-coverage evaluation.
//!
//! The crate is `no_std`-compatible (with `alloc`); the `std` feature (on by
//! default) only switches float math to the host implementation.

#![cfg_attr(not(feature = "std"), no_std)]
#![warn(missing_docs)]

extern crate alloc;

pub mod calib;
pub mod estimators;
pub mod graph;
pub mod hier;
pub mod kernels;
pub mod methods;
pub mod selection;
pub mod sim;

mod error;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = core::result::Result<T, Error>;
