//! Unbiased estimating functions `Ψ(y; θ) = b(θ)ᵀ a(y, θ) − c(θ)` and the
//! Huber primitives used to build them.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{norm_cdf, norm_pdf, RngStream};

/// Huber tuning constants: `c1` bounds the location / fixed-effect equations,
/// `c2` the scale / variance-component equations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuningConstants {
    pub c1: f64,
    pub c2: f64,
}

impl TuningConstants {
    pub fn new(c1: f64, c2: f64) -> Result<Self> {
        if !(c1 > 0.0 && c2 > 0.0) {
            return Err(Error::InvalidInput(format!(
                "tuning constants must be positive, got c1={c1}, c2={c2}"
            )));
        }
        Ok(Self { c1, c2 })
    }

    /// Effectively unbounded constants; the equations reduce to their
    /// classical (non-robust) counterparts.
    pub fn classical() -> Self {
        Self { c1: 1e6, c2: 1e6 }
    }
}

impl Default for TuningConstants {
    fn default() -> Self {
        Self { c1: 1.345, c2: 2.07 }
    }
}

/// Huber ψ: `sign(z) min(|z|, c)`.
#[inline]
pub fn huber_psi(z: f64, c: f64) -> f64 {
    z.clamp(-c, c)
}

/// Huber weight `min(1, c/|z|)`, equal to 1 at `z = 0`.
#[inline]
pub fn huber_weight(z: f64, c: f64) -> f64 {
    let a = z.abs();
    if a <= c {
        1.0
    } else {
        c / a
    }
}

/// Derivative of [`huber_psi`] (taken as 1 at the kinks' interior side).
#[inline]
pub fn huber_psi_deriv(z: f64, c: f64) -> f64 {
    if z.abs() < c {
        1.0
    } else {
        0.0
    }
}

/// `k(c) = E[ψ_c(Z)²]` for standard normal `Z`:
/// `2Φ(c) − 1 − 2cφ(c) + 2c²(1 − Φ(c))`.
pub fn consistency_k(c: f64) -> f64 {
    let upper = norm_cdf(-c);
    (1.0 - 2.0 * upper) - 2.0 * c * norm_pdf(c) + 2.0 * c * c * upper
}

/// An unbiased estimating function together with the model it is unbiased for.
///
/// `Ψ(y; θ) = data_part(y, θ) − correction_part(θ)`, and `Ψ` is also the sum
/// of `psi_units`. The model fixes the sample size / design, so
/// `correction_part` depends on `θ` only.
pub trait EstimatingFunctionModel: Sync {
    type Data: Send + Sync;

    fn dim(&self) -> usize;

    fn param_names(&self) -> Vec<String>;

    /// Coordinates constrained to be strictly positive.
    fn positive_mask(&self) -> Vec<bool>;

    /// Draws a dataset from `F_θ`.
    fn simulate(&self, theta: &DVector<f64>, rng: &mut RngStream) -> Self::Data;

    /// Per-unit contributions `ψ(y_i; θ)`.
    fn psi_units(&self, y: &Self::Data, theta: &DVector<f64>) -> Vec<DVector<f64>>;

    /// The data-dependent part `b(θ)ᵀ a(y, θ)`.
    fn data_part(&self, y: &Self::Data, theta: &DVector<f64>) -> DVector<f64>;

    /// The consistency correction `c(θ)`.
    fn correction_part(&self, theta: &DVector<f64>) -> DVector<f64>;

    fn psi(&self, y: &Self::Data, theta: &DVector<f64>) -> DVector<f64> {
        self.data_part(y, theta) - self.correction_part(theta)
    }

    /// Root `θ̃` of `Ψ(y; θ) = 0`.
    fn solve(&self, y: &Self::Data) -> Result<DVector<f64>>;

    fn is_admissible(&self, theta: &DVector<f64>) -> bool {
        theta.len() == self.dim()
            && theta.iter().all(|x| x.is_finite())
            && self
                .positive_mask()
                .iter()
                .zip(theta.iter())
                .all(|(&p, &x)| !p || x > 0.0)
    }
}

/// Sum of per-unit contributions.
pub fn sum_units(units: &[DVector<f64>], dim: usize) -> DVector<f64> {
    units.iter().fold(DVector::zeros(dim), |acc, u| acc + u)
}

/// `‖Ψ(y; θ)‖∞`.
pub fn root_residual<M: EstimatingFunctionModel>(model: &M, y: &M::Data, theta: &DVector<f64>) -> f64 {
    model.psi(y, theta).amax()
}
