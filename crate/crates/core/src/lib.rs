//! Union-bound thresholds for ultrametric overlap gap properties of the
//! symmetric binary perceptron.
//!
//! For a cluster sequence `k` and overlaps `q`, the expected number of
//! `k_s`-tuples of solutions realizing the ultrametric overlap pattern behaves
//! like `(2^h p^alpha)^n`. It vanishes once `alpha > alpha_bar = -h ln2 / ln p`.
//! [`combfactor`] computes `h`, [`probfactor`] computes `p`, and [`bound`]
//! combines and minimizes them over `q`.

// `!(x > 0.0)` style checks are there to reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bound;
pub mod cli;
pub mod combfactor;
pub mod core;
pub mod error;
pub mod probfactor;
pub mod rdtlink;
pub mod special;

pub use crate::error::{Error, Result};

pub type Spec = core::UltrametricSpec<f64>;
pub type SpecF32 = core::UltrametricSpec<f32>;
pub type Coeffs = core::CovarianceCoeffs<f64>;
pub type CoeffsF32 = core::CovarianceCoeffs<f32>;
