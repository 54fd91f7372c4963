//! Recovery of two block-sparse coefficient vectors from nonlinear
//! observations of their superposition,
//!
//! ```text
//! y = g(X (Φ θ₁ + Ψ θ₂)) + e,
//! ```
//!
//! by projected gradient descent with block hard thresholding, together with
//! a matched-filter pipeline for periodic links, theory diagnostics and a
//! Monte-Carlo experiment harness.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod error;
pub mod experiments;
pub mod io;
pub mod links;
pub mod matched_filter;
pub mod model;
pub mod operators;
pub mod seed;
pub mod solvers;

pub use error::{Error, Result};
