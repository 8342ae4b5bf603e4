//! Detection of sparse positive correlations in high-dimensional Gaussian
//! vectors under a coordinate-measurement budget.
//!
//! The testing problem: `n` jointly Gaussian coordinates are either all
//! independent standard normals (null) or carry an unknown contaminated set
//! `S` of `k` mutually positively correlated coordinates (alternative), with
//! `S` ranging over a structured class (k-sets, k-intervals, disjoint
//! tilings, rectangles). Measurements are bought coordinate-by-coordinate
//! under a total budget `M = m n`, and queries may adapt to history.
//!
//! The crate provides:
//!
//! - [`model`]: contamination classes, covariance structure, and exact
//!   sampling of observed coordinates through the additive common-signal
//!   representation.
//! - [`sensing`]: the budgeted measurement protocol, uniform and subsampled
//!   non-adaptive strategies, and session traces.
//! - [`divergence`]: KL closed forms for both covariance models, the
//!   `D(rho,k)` bound, adaptive and non-adaptive minimax lower bounds, and
//!   the `H(b) = b - 1 - log b` calibration machinery.
//! - [`detectors`]: scan and squared-sum tests, generic sequential
//!   thresholding, its interval/truncated/variance instantiations, and the
//!   randomized k-set procedure.
//! - [`risk`]: a reproducible, data-parallel Monte Carlo engine for the
//!   worst-case risk, with Hoeffding confidence half-widths.
//!
//! Trial-level parallelism uses rayon behind the default `parallel` feature;
//! disabling it falls back to sequential execution with bit-identical
//! results.

pub mod detectors;
pub mod divergence;
pub mod error;
pub mod exec;
pub mod model;
pub mod risk;
pub mod rng;
pub mod sensing;

pub use error::{Error, Result};
