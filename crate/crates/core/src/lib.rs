//! Numerical laboratory for degenerate Kolmogorov-type diffusions
//! `dX¹ = F1 dt + σ dB`, `dX² = F2 dt`.

// NaN-rejecting `!(x > 0.0)` guards and index loops over small dense
// blocks are deliberate.
#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::needless_range_loop,
    clippy::too_many_arguments,
    clippy::type_complexity
)]

pub mod coefficients;
pub mod counterexample;
pub mod error;
pub mod gaussian_kernel;
pub mod harness;
pub mod parametrix;
pub mod quadrature;
pub mod rng;
pub mod sde_sim;
pub mod stats;

pub use error::{LabError, Result};
