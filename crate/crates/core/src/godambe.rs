//! Sensitivity `H = −E ∂Ψ/∂θᵀ`, variability `J = E ΨΨᵀ` and the sandwich
//! `K = H⁻¹ J H⁻ᵀ`, by Monte Carlo over datasets simulated at `θ` or from
//! closed forms.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estfun::EstimatingFunctionModel;
use crate::numerics::{RngStream, SpdMatrix};
use crate::par;

pub const DEFAULT_NSIM: usize = 500;
pub const DEFAULT_FD_STEP: f64 = 1e-4;
const MIN_NSIM: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum MEstimateSource {
    Analytic,
    MonteCarlo { nsim: usize },
}

/// An M-estimate with its sandwich ingredients.
#[derive(Debug, Clone)]
pub struct MEstimate {
    pub theta_tilde: DVector<f64>,
    /// Symmetrized sensitivity matrix.
    pub h: DMatrix<f64>,
    pub j: SpdMatrix,
    pub k: SpdMatrix,
    /// Lower-triangular `B_R` with `B_R B_Rᵀ = J`.
    pub b_r: DMatrix<f64>,
    pub source: MEstimateSource,
    /// `‖H − Hᵀ‖_F / ‖H‖_F` before symmetrization.
    pub h_asymmetry: f64,
}

impl MEstimate {
    pub fn from_hj(theta_tilde: DVector<f64>, h_raw: &DMatrix<f64>, j: SpdMatrix, source: MEstimateSource) -> Result<Self> {
        let h_asymmetry = (h_raw - h_raw.transpose()).norm() / h_raw.norm().max(f64::MIN_POSITIVE);
        if h_asymmetry > 1e-2 {
            log::warn!("finite-difference sensitivity matrix is noticeably asymmetric ({h_asymmetry:.3e})");
        }
        let h = (h_raw + h_raw.transpose()) * 0.5;
        let (k, b_r) = sandwich(&h, &j)?;
        Ok(Self { theta_tilde, h, j, k, b_r, source, h_asymmetry })
    }

    /// Computes `θ̃` and Monte Carlo `H`, `J` from one set of `nsim` datasets
    /// simulated at `θ̃`.
    pub fn monte_carlo<M: EstimatingFunctionModel>(
        model: &M,
        y: &M::Data,
        nsim: usize,
        fd_step: f64,
        rng: &RngStream,
    ) -> Result<Self> {
        let theta = model.solve(y)?;
        let (h, j) = estimate_hj(model, &theta, nsim, rng, fd_step)?;
        Self::from_hj(theta, &h, j, MEstimateSource::MonteCarlo { nsim })
    }

    pub fn dim(&self) -> usize {
        self.theta_tilde.len()
    }

    /// Condition number of `B_R` (ratio of extreme singular values).
    pub fn b_r_condition(&self) -> f64 {
        let sv = self.b_r.clone().singular_values();
        sv.max() / sv.min()
    }

    /// Standard errors `sqrt(diag K)`.
    pub fn standard_errors(&self) -> DVector<f64> {
        self.k.matrix().diagonal().map(f64::sqrt)
    }

    pub fn to_record(&self, param_names: &[String]) -> MEstimateRecord {
        let rows = |m: &DMatrix<f64>| (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect();
        MEstimateRecord {
            param_names: param_names.to_vec(),
            theta_tilde: self.theta_tilde.iter().copied().collect(),
            standard_errors: self.standard_errors().iter().copied().collect(),
            h: rows(&self.h),
            j: rows(self.j.matrix()),
            k: rows(self.k.matrix()),
            b_r: rows(&self.b_r),
            source: self.source,
            h_asymmetry: self.h_asymmetry,
            b_r_condition: self.b_r_condition(),
        }
    }
}

/// Serializable view of an [`MEstimate`]; matrices are row-major.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MEstimateRecord {
    pub param_names: Vec<String>,
    pub theta_tilde: Vec<f64>,
    pub standard_errors: Vec<f64>,
    pub h: Vec<Vec<f64>>,
    pub j: Vec<Vec<f64>>,
    pub k: Vec<Vec<f64>>,
    pub b_r: Vec<Vec<f64>>,
    pub source: MEstimateSource,
    pub h_asymmetry: f64,
    pub b_r_condition: f64,
}

fn check_nsim(nsim: usize) -> Result<()> {
    if nsim < MIN_NSIM {
        return Err(Error::InvalidInput(format!("nsim must be at least {MIN_NSIM}, got {nsim}")));
    }
    Ok(())
}

/// Symmetrizes and, if Cholesky fails, adds a ridge of `1e-10 · tr/d`.
fn spd_with_ridge(m: DMatrix<f64>) -> Result<SpdMatrix> {
    let s = (&m + m.transpose()) * 0.5;
    match SpdMatrix::new(s.clone()) {
        Ok(spd) => Ok(spd),
        Err(_) => {
            let d = s.nrows();
            let ridge = 1e-10 * s.trace() / d as f64;
            SpdMatrix::new(s + DMatrix::identity(d, d) * ridge)
                .map_err(|_| Error::NotPositiveDefinite(": variability matrix after ridging".into()))
        }
    }
}

/// Raw second moment of `Ψ(y*; θ)` over `nsim` datasets simulated at `θ`.
pub fn estimate_j<M: EstimatingFunctionModel>(model: &M, theta: &DVector<f64>, nsim: usize, rng: &RngStream) -> Result<SpdMatrix> {
    check_nsim(nsim)?;
    let psis = par::map_indexed(nsim, |i| {
        let mut r = rng.derive(i as u64);
        let y = model.simulate(theta, &mut r);
        model.psi(&y, theta)
    });
    let d = model.dim();
    let j = psis.iter().fold(DMatrix::zeros(d, d), |acc, p| acc + p * p.transpose()) / nsim as f64;
    spd_with_ridge(j)
}

fn fd_steps<M: EstimatingFunctionModel>(model: &M, theta: &DVector<f64>, fd_step: f64) -> Vec<f64> {
    let mask = model.positive_mask();
    theta
        .iter()
        .zip(mask)
        .map(|(&t, positive)| {
            let h = fd_step * t.abs().max(1.0);
            if positive {
                h.min(0.5 * t)
            } else {
                h
            }
        })
        .collect()
}

fn perturbed(theta: &DVector<f64>, k: usize, delta: f64) -> DVector<f64> {
    let mut t = theta.clone();
    t[k] += delta;
    t
}

/// Central-difference Jacobian of `θ ↦ f(θ)`, column by column.
fn fd_jacobian<F: Fn(&DVector<f64>) -> DVector<f64>>(f: F, theta: &DVector<f64>, steps: &[f64]) -> Result<DMatrix<f64>> {
    let d = theta.len();
    let mut jac = DMatrix::zeros(d, d);
    for (k, &h) in steps.iter().enumerate() {
        let col = (f(&perturbed(theta, k, h)) - f(&perturbed(theta, k, -h))) / (2.0 * h);
        if col.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteDerivative { coordinate: k });
        }
        jac.set_column(k, &col);
    }
    Ok(jac)
}

/// Average over `nsim` simulated datasets of the central-difference Jacobian
/// of `−Ψ(y*; ·)` at `θ`, with step `fd_step · max(1, |θ_k|)` (capped at half
/// the value for positive coordinates). Not symmetrized.
pub fn estimate_h<M: EstimatingFunctionModel>(
    model: &M,
    theta: &DVector<f64>,
    nsim: usize,
    rng: &RngStream,
    fd_step: f64,
) -> Result<DMatrix<f64>> {
    Ok(estimate_hj_raw(model, theta, nsim, rng, fd_step)?.0)
}

/// `H` (unsymmetrized) and `J` from the same simulated datasets.
pub fn estimate_hj<M: EstimatingFunctionModel>(
    model: &M,
    theta: &DVector<f64>,
    nsim: usize,
    rng: &RngStream,
    fd_step: f64,
) -> Result<(DMatrix<f64>, SpdMatrix)> {
    let (h, j) = estimate_hj_raw(model, theta, nsim, rng, fd_step)?;
    Ok((h, spd_with_ridge(j)?))
}

fn estimate_hj_raw<M: EstimatingFunctionModel>(
    model: &M,
    theta: &DVector<f64>,
    nsim: usize,
    rng: &RngStream,
    fd_step: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_nsim(nsim)?;
    if !(fd_step > 0.0) {
        return Err(Error::InvalidInput("fd_step must be positive".into()));
    }
    let steps = fd_steps(model, theta, fd_step);
    // Ψ = a(y, θ) − c(θ): the correction's Jacobian is shared by all datasets.
    let dc = fd_jacobian(|t| model.correction_part(t), theta, &steps)?;
    let c = model.correction_part(theta);
    let per_sim = par::map_indexed(nsim, |i| -> Result<(DMatrix<f64>, DVector<f64>)> {
        let mut r = rng.derive(i as u64);
        let y = model.simulate(theta, &mut r);
        let da = fd_jacobian(|t| model.data_part(&y, t), theta, &steps)?;
        Ok((da, model.data_part(&y, theta) - &c))
    });
    let d = model.dim();
    let (mut da_sum, mut j) = (DMatrix::zeros(d, d), DMatrix::zeros(d, d));
    for res in per_sim {
        let (da, psi) = res?;
        da_sum += da;
        j += &psi * psi.transpose();
    }
    let h = dc - da_sum / nsim as f64;
    Ok((h, j / nsim as f64))
}

/// `K = H⁻¹ J H⁻ᵀ` and the lower Cholesky factor of `J`.
pub fn sandwich(h: &DMatrix<f64>, j: &SpdMatrix) -> Result<(SpdMatrix, DMatrix<f64>)> {
    if h.nrows() != j.dim() || !h.is_square() {
        return Err(Error::InvalidInput("H and J dimensions differ".into()));
    }
    let lu = h.clone().lu();
    let h_inv = lu.try_inverse().ok_or(Error::SingularH)?;
    if h_inv.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularH);
    }
    let k = &h_inv * j.matrix() * h_inv.transpose();
    let k = SpdMatrix::from_symmetrized(k)?;
    Ok((k, j.cholesky_lower()))
}
