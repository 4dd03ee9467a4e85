//! Divergence toolkit for densities tabulated on uniform grids.
//!
//! Four layers:
//!
//! - [`generator`]: convex generators `B` with first and second derivatives,
//!   the affine standardization `B*(y) = B(y) - B(0) - B'(0) y`, and a small
//!   catalog of built-in generators.
//! - [`grid`]: uniform grids, trapezoidal quadrature and grid densities.
//! - [`divergence`]: Bregman, density power (DPD), Kullback-Leibler,
//!   logarithmic density power (LDPD) and the general three-term logarithmic
//!   Bregman functional.
//! - [`characterization`]: diagnostics that decide numerically whether a
//!   generator admits a valid logarithmic Bregman divergence, plus a seeded
//!   counterexample search.
//!
//! The [`cli`] module wires these together behind the `divkit` binary.

pub mod characterization;
pub mod cli;
pub mod divergence;
pub mod error;
pub mod generator;
pub mod grid;

pub use error::{Error, Result};
