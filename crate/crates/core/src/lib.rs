//! Deep residual random Fourier feature networks.
//!
//! Layers are fitted one at a time by an adaptive Metropolis sampler over
//! frequencies with ridge-solved amplitudes ([`layerwise`]), optionally
//! followed by global Adam training ([`gradopt`]). [`experiment`] runs
//! replicated sweeps and comparisons, [`theory`] checks the approximation
//! estimates numerically.

// `!(x >= 0.0)` is how NaN gets rejected along with negatives
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// index loops mirror the matrix formulas they implement
#![allow(clippy::needless_range_loop)]

pub mod error;
pub mod experiment;
pub mod gradopt;
pub mod layerwise;
pub mod linalg;
pub mod metropolis;
pub mod model;
pub mod seeds;
pub mod targets;
pub mod theory;

pub use error::{Error, Result};
