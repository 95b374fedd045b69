//! Robust approximate Bayesian computation (ABC-R).
//!
//! Posterior sampling that conditions on a rescaled robust M-estimating
//! function instead of the full data. The crate provides:
//!
//! - [`estfun`]: the estimating-function abstraction and Huber primitives,
//! - [`toy`]: a normal location-scale model with Huber Proposal-2 equations,
//! - [`lmm`]: two-component nested linear mixed models with robust REML II
//!   equations,
//! - [`godambe`]: sensitivity, variability and sandwich matrices,
//! - [`sampler`]: the ABC-R MCMC sampler and bandwidth calibration,
//! - [`baselines`]: full-likelihood MH, empirical likelihood and grid posteriors,
//! - [`harness`]: FBST evidence, posterior summaries, sensitivity and
//!   simulation studies.
//!
//! Data-parallel loops (Monte Carlo replications, simulated datasets, grid
//! cells) run on rayon when the `parallel` feature is enabled and fall back to
//! sequential iteration otherwise. Results are identical either way.

pub mod baselines;
pub mod error;
pub mod estfun;
pub mod godambe;
pub mod harness;
pub mod lmm;
pub mod numerics;
pub mod par;
pub mod sampler;
pub mod toy;

pub use error::{Error, Result};
pub use estfun::{EstimatingFunctionModel, TuningConstants};
pub use numerics::{RngStream, SpdMatrix};
