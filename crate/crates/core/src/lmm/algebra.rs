use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{LmmDesign, LmmResponse, LmmTheta, VarianceCorrection};
use crate::error::{Error, Result};
use crate::estfun::{consistency_k, huber_psi, TuningConstants};
use crate::numerics::{matrix_sqrt, RngStream, SpdMatrix, SqrtMode, LN_2PI};
use crate::toy::ContaminationSpec;

/// Spectral form of `V = σ₁² 11ᵀ + σ₂² I` for a group of size `m`.
///
/// `V` has eigenvalue `σ₂² + m σ₁²` on `1/√m` and `σ₂²` on its orthogonal
/// complement, so any power of `V` is `λ_w^p I + (λ_b^p − λ_w^p) 11ᵀ/m`.
#[derive(Debug, Clone, Copy)]
pub struct GroupSpectrum {
    m: usize,
    within: f64,
    between: f64,
}

impl GroupSpectrum {
    pub fn new(m: usize, sigma1_sq: f64, sigma2_sq: f64) -> Self {
        Self { m, within: sigma2_sq, between: sigma2_sq + m as f64 * sigma1_sq }
    }

    /// `(λ_w^p, λ_b^p)`.
    #[inline]
    fn powers(&self, p: f64) -> (f64, f64) {
        if p == -1.0 {
            (1.0 / self.within, 1.0 / self.between)
        } else if p == -0.5 {
            (1.0 / self.within.sqrt(), 1.0 / self.between.sqrt())
        } else {
            (self.within.powf(p), self.between.powf(p))
        }
    }

    /// `V^p v`.
    pub fn pow_mul(&self, v: &DVector<f64>, p: f64) -> DVector<f64> {
        let (a, b) = self.powers(p);
        let shift = (b - a) * v.sum() / self.m as f64;
        v.map(|x| a * x + shift)
    }

    /// `V^p X`, column by column.
    pub fn pow_mul_mat(&self, x: &DMatrix<f64>, p: f64) -> DMatrix<f64> {
        let (a, b) = self.powers(p);
        let mut out = x * a;
        for (mut col, src) in out.column_iter_mut().zip(x.column_iter()) {
            let shift = (b - a) * src.sum() / self.m as f64;
            col.add_scalar_mut(shift);
        }
        out
    }

    pub fn log_det(&self) -> f64 {
        (self.m as f64 - 1.0) * self.within.ln() + self.between.ln()
    }

    /// `tr(V^p)`.
    pub fn trace_pow(&self, p: f64) -> f64 {
        let (a, b) = self.powers(p);
        (self.m as f64 - 1.0) * a + b
    }

    /// `1ᵀ V^p 1`.
    pub fn ones_form(&self, p: f64) -> f64 {
        self.m as f64 * self.powers(p).1
    }

    pub fn dense_pow(&self, p: f64) -> DMatrix<f64> {
        let (a, b) = self.powers(p);
        let m = self.m;
        DMatrix::from_fn(m, m, |i, j| (b - a) / m as f64 + if i == j { a } else { 0.0 })
    }
}

/// Dense per-group matrices built by general-purpose factorizations; the
/// reference against which the spectral shortcuts are checked.
#[derive(Debug, Clone)]
pub struct GroupMatrices {
    pub v: SpdMatrix,
    pub v_inv: DMatrix<f64>,
    pub v_inv_sqrt: DMatrix<f64>,
}

impl GroupMatrices {
    pub fn new(m: usize, sigma1_sq: f64, sigma2_sq: f64) -> Result<Self> {
        let v = DMatrix::from_fn(m, m, |i, j| sigma1_sq + if i == j { sigma2_sq } else { 0.0 });
        let v = SpdMatrix::new(v).map_err(|_| Error::SingularV { group: 0 })?;
        let v_inv = v.inverse();
        let v_inv_sqrt = matrix_sqrt(&v_inv, SqrtMode::SymmetricEigen)?;
        Ok(Self { v, v_inv: v_inv.into_matrix(), v_inv_sqrt })
    }
}

fn check_variances(theta: &LmmTheta) -> Result<()> {
    if theta.sigma1_sq > 0.0 && theta.sigma2_sq > 0.0 {
        Ok(())
    } else {
        Err(Error::SingularV { group: 0 })
    }
}

fn check_conformable(y: &LmmResponse, design: &LmmDesign, theta: &LmmTheta) -> Result<()> {
    if y.len() != design.g() || theta.alpha.len() != design.q() {
        return Err(Error::InvalidInput(format!(
            "response has {} groups and alpha {} entries; design has {} groups and {} columns",
            y.len(),
            theta.alpha.len(),
            design.g(),
            design.q()
        )));
    }
    for (j, (yj, x)) in y.iter().zip(design.groups()).enumerate() {
        if yj.len() != x.nrows() {
            return Err(Error::InvalidInput(format!("group {j}: {} responses for {} design rows", yj.len(), x.nrows())));
        }
    }
    Ok(())
}

/// Gaussian log-likelihood `−½ Σ_j {log|V_j| + e_jᵀ V_j⁻¹ e_j + n_j log 2π}`.
pub fn lmm_loglik(y: &LmmResponse, design: &LmmDesign, theta: &LmmTheta) -> Result<f64> {
    check_variances(theta)?;
    check_conformable(y, design, theta)?;
    let alpha = DVector::from_column_slice(&theta.alpha);
    let mut ll = 0.0;
    for (yj, x) in y.iter().zip(design.groups()) {
        let sp = GroupSpectrum::new(yj.len(), theta.sigma1_sq, theta.sigma2_sq);
        let e = yj - x * &alpha;
        let quad = e.dot(&sp.pow_mul(&e, -1.0));
        ll -= 0.5 * (sp.log_det() + quad + yj.len() as f64 * LN_2PI);
    }
    Ok(ll)
}

/// Draws responses group by group; with probability `ε` a group's covariance
/// is `inflation · V_j`.
pub fn lmm_simulate(
    theta: &LmmTheta,
    design: &LmmDesign,
    cont: ContaminationSpec,
    rng: &mut RngStream,
) -> LmmResponse {
    let alpha = DVector::from_column_slice(&theta.alpha);
    let (s1, s2) = (theta.sigma1_sq.sqrt(), theta.sigma2_sq.sqrt());
    design
        .groups()
        .iter()
        .map(|x| {
            let scale = if cont.epsilon > 0.0 && rng.random::<f64>() < cont.epsilon {
                cont.inflation.sqrt()
            } else {
                1.0
            };
            let b: f64 = rng.sample::<f64, _>(StandardNormal) * s1 * scale;
            let mut y = x * &alpha;
            for v in y.iter_mut() {
                let e: f64 = rng.sample(StandardNormal);
                *v += b + e * s2 * scale;
            }
            y
        })
        .collect()
}

/// Per-group contributions to `tr(P Z_i Z_iᵀ)` (or `tr(V⁻¹ Z_i Z_iᵀ)` for the
/// ML-type correction), and their totals.
#[derive(Debug, Clone)]
pub struct ProjectionTraces {
    pub per_group: Vec<[f64; 2]>,
    pub total: [f64; 2],
}

impl ProjectionTraces {
    pub fn compute(design: &LmmDesign, theta: &LmmTheta, correction: VarianceCorrection) -> Result<Self> {
        check_variances(theta)?;
        let spectra: Vec<GroupSpectrum> = design
            .groups()
            .iter()
            .map(|x| GroupSpectrum::new(x.nrows(), theta.sigma1_sq, theta.sigma2_sq))
            .collect();
        let mut per_group: Vec<[f64; 2]> = spectra.iter().map(|sp| [sp.ones_form(-1.0), sp.trace_pow(-1.0)]).collect();
        if correction == VarianceCorrection::Reml {
            let q = design.q();
            let vinv_x: Vec<DMatrix<f64>> =
                design.groups().iter().zip(&spectra).map(|(x, sp)| sp.pow_mul_mat(x, -1.0)).collect();
            let m = design
                .groups()
                .iter()
                .zip(&vinv_x)
                .fold(DMatrix::zeros(q, q), |acc, (x, vx)| acc + x.transpose() * vx);
            let m_inv = m.cholesky().ok_or(Error::RankDeficientX)?.inverse();
            for (t, vx) in per_group.iter_mut().zip(&vinv_x) {
                // Z_1 term: (X_jᵀ V_j⁻¹ 1)ᵀ M⁻¹ (X_jᵀ V_j⁻¹ 1)
                let u = vx.row_sum().transpose();
                t[0] -= u.dot(&(&m_inv * &u));
                // Z_2 term: tr(M⁻¹ X_jᵀ V_j⁻² X_j)
                let g = vx.transpose() * vx;
                t[1] -= m_inv.component_mul(&g).sum();
            }
        }
        let total = per_group.iter().fold([0.0, 0.0], |a, t| [a[0] + t[0], a[1] + t[1]]);
        Ok(Self { per_group, total })
    }
}

/// Per-group data parts: `(X_jᵀ V_j^{-1/2} ψ_{c1}(r_j), ½(1ᵀ V_j^{-1/2} ψ_{c2}(r_j))², ½‖V_j^{-1/2} ψ_{c2}(r_j)‖²)`.
fn group_data_parts<'a>(
    y: &'a LmmResponse,
    design: &'a LmmDesign,
    theta: &LmmTheta,
    tc: TuningConstants,
) -> impl Iterator<Item = DVector<f64>> + 'a {
    let alpha = DVector::from_column_slice(&theta.alpha);
    let q = design.q();
    let (s1, s2) = (theta.sigma1_sq, theta.sigma2_sq);
    y.iter().zip(design.groups()).map(move |(yj, x)| {
        let sp = GroupSpectrum::new(yj.len(), s1, s2);
        let e = yj - x * &alpha;
        let r = sp.pow_mul(&e, -0.5);
        let w1 = sp.pow_mul(&r.map(|z| huber_psi(z, tc.c1)), -0.5);
        let w2 = sp.pow_mul(&r.map(|z| huber_psi(z, tc.c2)), -0.5);
        let mut out = DVector::zeros(q + 2);
        out.rows_mut(0, q).copy_from(&(x.transpose() * w1));
        out[q] = 0.5 * w2.sum().powi(2);
        out[q + 1] = 0.5 * w2.norm_squared();
        out
    })
}

pub(super) fn data_part(y: &LmmResponse, design: &LmmDesign, theta: &LmmTheta, tc: TuningConstants) -> DVector<f64> {
    group_data_parts(y, design, theta, tc).fold(DVector::zeros(design.dim()), |acc, u| acc + u)
}

pub(super) fn correction_part(
    design: &LmmDesign,
    theta: &LmmTheta,
    tc: TuningConstants,
    correction: VarianceCorrection,
) -> Result<DVector<f64>> {
    let tr = ProjectionTraces::compute(design, theta, correction)?;
    let k2 = consistency_k(tc.c2);
    let q = design.q();
    let mut c = DVector::zeros(q + 2);
    c[q] = 0.5 * k2 * tr.total[0];
    c[q + 1] = 0.5 * k2 * tr.total[1];
    Ok(c)
}

/// `Ψ(y; θ)` for the robust REML II equations.
pub fn robust_reml2_psi(
    y: &LmmResponse,
    design: &LmmDesign,
    theta: &LmmTheta,
    tc: TuningConstants,
) -> Result<DVector<f64>> {
    check_variances(theta)?;
    check_conformable(y, design, theta)?;
    Ok(data_part(y, design, theta, tc) - correction_part(design, theta, tc, VarianceCorrection::Reml)?)
}

/// Per-group contributions whose sum is `Ψ(y; θ)`; the correction is split
/// across groups through the per-group trace contributions.
pub fn robust_reml2_units(
    y: &LmmResponse,
    design: &LmmDesign,
    theta: &LmmTheta,
    tc: TuningConstants,
    correction: VarianceCorrection,
) -> Result<Vec<DVector<f64>>> {
    check_variances(theta)?;
    check_conformable(y, design, theta)?;
    let tr = ProjectionTraces::compute(design, theta, correction)?;
    let k2 = consistency_k(tc.c2);
    let q = design.q();
    Ok(group_data_parts(y, design, theta, tc)
        .zip(&tr.per_group)
        .map(|(mut u, t)| {
            u[q] -= 0.5 * k2 * t[0];
            u[q + 1] -= 0.5 * k2 * t[1];
            u
        })
        .collect())
}

/// Expected value of the REML-corrected variance equations at the true `θ`
/// under the central model: `½ k(c2) {tr(V⁻¹Z_iZ_iᵀ) − tr(P Z_iZ_iᵀ)}`.
/// The ML-type correction has zero offset.
pub fn reml_offset(design: &LmmDesign, theta: &LmmTheta, tc: TuningConstants) -> Result<[f64; 2]> {
    let ml = ProjectionTraces::compute(design, theta, VarianceCorrection::Ml)?;
    let reml = ProjectionTraces::compute(design, theta, VarianceCorrection::Reml)?;
    let k2 = consistency_k(tc.c2);
    Ok([0.5 * k2 * (ml.total[0] - reml.total[0]), 0.5 * k2 * (ml.total[1] - reml.total[1])])
}
