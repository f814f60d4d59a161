//! Dynamic likelihood hazard rate estimation for randomly censored survival data.
//!
//! The crate fits a parametric hazard family *locally*: around every time `s`
//! a kernel-weighted likelihood is maximised over the window `s ± h/2`, and
//! the fitted family is evaluated at `s`. Classical baselines (Nelson–Aalen,
//! the kernel-smoothed Nelson–Aalen), global and weighted maximum likelihood,
//! plug-in and goodness-of-fit driven bandwidth selection, and a Monte Carlo
//! harness for checking the bias/variance approximations are included.
//!
//! Kernels live on `[-1/2, 1/2]` (not the more common `[-1, 1]`), so the
//! bandwidth `h` is the *full* width of the smoothing window. A kernel `L` on
//! `[-1, 1]` corresponds to `K(u) = 2 L(2u)` here; moments convert as
//! `beta_K = beta_L / 4`, `gamma_K = 2 gamma_L`, `delta_K = delta_L / 2`.
//!
//! Module map:
//!
//! - [`data`]: censored samples, counting/at-risk queries, CSV ingestion, simulation
//! - [`kernels`]: kernels and their moment constants
//! - [`nonparam`]: Nelson–Aalen and the kernel-smoothed hazard
//! - [`parametric`]: hazard families, weighted MLE, sandwich matrices
//! - [`dynamic`]: local likelihood estimation, bias factors, bands, densities
//! - [`bandwidth`]: MSE-optimal and plug-in bandwidths, pilots, post-smoothing
//! - [`gof`]: interval goodness-of-fit tests and window selection
//! - [`bench`]: Monte Carlo experiments and estimator comparison

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bandwidth;
pub mod bench;
pub mod data;
pub mod dynamic;
mod error;
pub mod gof;
pub mod kernels;
pub mod nonparam;
pub mod parametric;
pub mod quad;

pub use error::{Error, Result};
