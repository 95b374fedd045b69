use nalgebra::{DMatrix, DVector};

use super::algebra::{correction_part, data_part, GroupSpectrum};
use super::{LmmDesign, LmmResponse, LmmTheta, VarianceCorrection};
use crate::error::{Error, Result};
use crate::estfun::{huber_weight, TuningConstants};

/// Variance components are kept above `VARIANCE_FLOOR` times the pooled
/// residual variance of the starting fit.
pub const VARIANCE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    pub correction: VarianceCorrection,
    /// Root certificate: `‖Ψ‖∞ ≤ tol` over the free coordinates. Newton keeps
    /// polishing towards `tol / 1000` while it makes progress.
    pub tol: f64,
    pub max_iter: usize,
    /// Iterations of the fixed-point phase before switching to Newton.
    pub fixed_point_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { correction: VarianceCorrection::Reml, tol: 1e-7, max_iter: 100, fixed_point_iter: 25 }
    }
}

#[derive(Debug, Clone)]
pub struct LmmFit {
    pub theta: LmmTheta,
    pub iterations: usize,
    /// Whether `σ₁²`, `σ₂²` ended on the floor; their equations are then
    /// excluded from the certificate.
    pub floored: [bool; 2],
    /// `‖Ψ‖∞` over the free coordinates.
    pub residual: f64,
}

pub fn lmm_solve(y: &LmmResponse, design: &LmmDesign, tc: TuningConstants) -> Result<LmmFit> {
    lmm_solve_with(y, design, tc, &SolverOptions::default())
}

struct Problem<'a> {
    y: &'a LmmResponse,
    design: &'a LmmDesign,
    tc: TuningConstants,
    correction: VarianceCorrection,
}

impl Problem<'_> {
    fn parts(&self, theta: &LmmTheta) -> Result<(DVector<f64>, DVector<f64>)> {
        let c = correction_part(self.design, theta, self.tc, self.correction)?;
        Ok((data_part(self.y, self.design, theta, self.tc), c))
    }

    fn psi(&self, theta: &LmmTheta) -> Result<DVector<f64>> {
        let (a, c) = self.parts(theta)?;
        Ok(a - c)
    }
}

fn starting_values(y: &LmmResponse, design: &LmmDesign) -> Result<(Vec<f64>, f64, f64)> {
    let q = design.q();
    let (mut xtx, mut xty) = (DMatrix::zeros(q, q), DVector::zeros(q));
    for (yj, x) in y.iter().zip(design.groups()) {
        xtx += x.transpose() * x;
        xty += x.transpose() * yj;
    }
    let alpha = xtx.cholesky().ok_or(Error::RankDeficientX)?.solve(&xty);
    let (mut within, mut df, mut between, mut inv_m) = (0.0, 0usize, 0.0, 0.0);
    for (yj, x) in y.iter().zip(design.groups()) {
        let e = yj - x * &alpha;
        let m = e.len();
        let mean = e.mean();
        within += e.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
        df += m - 1;
        between += mean * mean;
        inv_m += 1.0 / m as f64;
    }
    let g = y.len() as f64;
    let s2 = if df > 0 { within / df as f64 } else { 0.0 };
    let s1 = between / g - s2 * inv_m / g;
    let total = (within + between) / (y.iter().map(|v| v.len()).sum::<usize>() as f64);
    if !(total > 0.0) {
        return Err(Error::DegenerateSample("residuals of the least-squares fit are all zero".into()));
    }
    let s2 = if s2 > 0.0 { s2 } else { total };
    Ok((alpha.iter().copied().collect(), s1.max(0.1 * s2), s2))
}

/// One weighted least-squares step for `α` at fixed variances, with Huber
/// weights on the standardized residuals.
fn irls_alpha(p: &Problem, theta: &LmmTheta) -> Result<Vec<f64>> {
    let q = p.design.q();
    let alpha = DVector::from_column_slice(&theta.alpha);
    let (mut lhs, mut rhs) = (DMatrix::zeros(q, q), DVector::zeros(q));
    for (yj, x) in p.y.iter().zip(p.design.groups()) {
        let sp = GroupSpectrum::new(yj.len(), theta.sigma1_sq, theta.sigma2_sq);
        let wx = sp.pow_mul_mat(x, -0.5);
        let wy = sp.pow_mul(yj, -0.5);
        let r = &wy - &wx * &alpha;
        let w = r.map(|z| huber_weight(z, p.tc.c1));
        let dwx = DMatrix::from_fn(wx.nrows(), q, |i, k| w[i] * wx[(i, k)]);
        lhs += dwx.transpose() * &wx;
        rhs += dwx.transpose() * wy;
    }
    let a = lhs.cholesky().ok_or(Error::RankDeficientX)?.solve(&rhs);
    Ok(a.iter().copied().collect())
}

/// Solves the robust REML II equations.
///
/// A fixed-point phase alternates a Huber-weighted GLS step for `α` with the
/// multiplicative updates `σ_i² ← σ_i² a_i / c_i` (data part over correction
/// part), which is exact for the overall scale. Newton's method in
/// `(α, log σ²)` with a central-difference Jacobian and backtracking on `‖Ψ‖₂`
/// then polishes the root.
pub fn lmm_solve_with(
    y: &LmmResponse,
    design: &LmmDesign,
    tc: TuningConstants,
    opts: &SolverOptions,
) -> Result<LmmFit> {
    if y.len() != design.g() || y.iter().zip(design.groups()).any(|(v, x)| v.len() != x.nrows()) {
        return Err(Error::InvalidInput("response does not conform to the design".into()));
    }
    if y.iter().flat_map(|v| v.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite response".into()));
    }
    let p = Problem { y, design, tc, correction: opts.correction };
    let q = design.q();
    let (alpha, s1, s2) = starting_values(y, design)?;
    let floor = VARIANCE_FLOOR * s2;
    let mut theta = LmmTheta { alpha, sigma1_sq: s1, sigma2_sq: s2 };
    let mut floored = [false; 2];
    let mut iterations = 0;

    let residual_of = |psi: &DVector<f64>, floored: &[bool; 2]| {
        (0..q + 2).filter(|&k| k < q || !floored[k - q]).map(|k| psi[k].abs()).fold(0.0, f64::max)
    };

    while iterations < opts.fixed_point_iter.min(opts.max_iter) {
        iterations += 1;
        theta.alpha = irls_alpha(&p, &theta)?;
        let (a, c) = p.parts(&theta)?;
        let old = [theta.sigma1_sq, theta.sigma2_sq];
        let mut change: f64 = 0.0;
        for i in 0..2 {
            if c[q + i] > 0.0 && a[q + i] >= 0.0 {
                let new = (old[i] * a[q + i] / c[q + i]).max(floor);
                change = change.max((new / old[i] - 1.0).abs());
                if i == 0 {
                    theta.sigma1_sq = new;
                } else {
                    theta.sigma2_sq = new;
                }
            }
        }
        floored = [theta.sigma1_sq <= floor, theta.sigma2_sq <= floor];
        if change < 1e-3 {
            break;
        }
    }

    let mut residual = residual_of(&p.psi(&theta)?, &floored);
    while residual > 1e-3 * opts.tol && iterations < opts.max_iter {
        iterations += 1;
        let active: Vec<usize> = (0..q + 2).filter(|&k| k < q || !floored[k - q]).collect();
        let to_z = |t: &LmmTheta| -> DVector<f64> {
            let full = t.to_vector();
            DVector::from_iterator(active.len(), active.iter().map(|&k| if k < q { full[k] } else { full[k].ln() }))
        };
        let from_z = |z: &DVector<f64>, base: &LmmTheta| -> LmmTheta {
            let mut full = base.to_vector();
            for (i, &k) in active.iter().enumerate() {
                full[k] = if k < q { z[i] } else { z[i].exp() };
            }
            LmmTheta::from_vector(&full)
        };
        let eval = |z: &DVector<f64>| -> Result<DVector<f64>> {
            let psi = p.psi(&from_z(z, &theta))?;
            Ok(DVector::from_iterator(active.len(), active.iter().map(|&k| psi[k])))
        };
        let z = to_z(&theta);
        let f = eval(&z)?;
        let d = active.len();
        let mut jac = DMatrix::zeros(d, d);
        for k in 0..d {
            let h = 1e-6 * z[k].abs().max(1.0);
            let (mut zp, mut zm) = (z.clone(), z.clone());
            zp[k] += h;
            zm[k] -= h;
            let col = (eval(&zp)? - eval(&zm)?) / (2.0 * h);
            if col.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteDerivative { coordinate: active[k] });
            }
            jac.set_column(k, &col);
        }
        let step = match jac.clone().lu().solve(&(-&f)) {
            Some(s) if s.iter().all(|v| v.is_finite()) => s,
            _ => jac.svd(true, true).solve(&(-&f), 1e-12).map_err(|e| Error::InvalidInput(e.to_string()))?,
        };
        let f_norm = f.norm();
        let mut lambda = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let cand = &z + &step * lambda;
            if cand.iter().all(|v| v.is_finite()) {
                if let Ok(fc) = eval(&cand) {
                    if fc.norm() < (1.0 - 1e-4 * lambda) * f_norm {
                        accepted = Some(cand);
                        break;
                    }
                }
            }
            lambda *= 0.5;
        }
        let Some(z_new) = accepted else { break };
        theta = from_z(&z_new, &theta);
        if theta.sigma1_sq <= floor {
            theta.sigma1_sq = floor;
            floored[0] = true;
        }
        if theta.sigma2_sq <= floor {
            theta.sigma2_sq = floor;
            floored[1] = true;
        }
        residual = residual_of(&p.psi(&theta)?, &floored);
    }
    if residual <= opts.tol {
        Ok(LmmFit { theta, iterations, floored, residual })
    } else {
        Err(Error::NoConvergence { what: "robust REML II solver".into(), iterations })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lmm::{lmm_simulate, GroupMatrices};
    use crate::numerics::RngStream;
    use crate::toy::ContaminationSpec;

    fn truth() -> LmmTheta {
        LmmTheta::new(vec![2.0, -1.0, 0.5], 1.5, 1.0).unwrap()
    }

    #[test]
    fn recovers_parameters_and_certifies_root() {
        let design = LmmDesign::one_way(60, 3).unwrap();
        let y = lmm_simulate(&truth(), &design, ContaminationSpec::none(), &mut RngStream::new(11, 0));
        let fit = lmm_solve(&y, &design, TuningConstants::default()).unwrap();
        assert_eq!(fit.floored, [false, false]);
        let psi = crate::lmm::robust_reml2_psi(&y, &design, &fit.theta, TuningConstants::default()).unwrap();
        assert!(psi.amax() <= 1e-7, "{psi}");
        let est = fit.theta.to_vector();
        let tr = truth().to_vector();
        for k in 0..3 {
            assert!((est[k] - tr[k]).abs() < 0.6, "alpha {k}: {}", est[k]);
        }
        assert!((est[3] / tr[3]).ln().abs() < 0.7);
        assert!((est[4] / tr[4]).ln().abs() < 0.35);
    }

    /// Dense restricted log-likelihood `−½{log|V| + log|XᵀV⁻¹X| + yᵀPy}`.
    fn restricted_loglik(y: &LmmResponse, design: &LmmDesign, s1: f64, s2: f64) -> f64 {
        let q = design.q();
        let (mut logdet, mut m, mut xty, mut yvy) = (0.0, DMatrix::zeros(q, q), DVector::zeros(q), 0.0);
        for (yj, x) in y.iter().zip(design.groups()) {
            let gm = GroupMatrices::new(yj.len(), s1, s2).unwrap();
            logdet += gm.v.matrix().determinant().ln();
            m += x.transpose() * &gm.v_inv * x;
            xty += x.transpose() * &gm.v_inv * yj;
            yvy += yj.dot(&(&gm.v_inv * yj));
        }
        let chol = m.clone().cholesky().unwrap();
        let ypy = yvy - xty.dot(&chol.solve(&xty));
        -0.5 * (logdet + m.determinant().ln() + ypy)
    }

    #[test]
    fn classical_limit_maximizes_restricted_likelihood() {
        let design = LmmDesign::one_way(25, 3).unwrap();
        let y = lmm_simulate(&truth(), &design, ContaminationSpec::none(), &mut RngStream::new(12, 0));
        let fit = lmm_solve(&y, &design, TuningConstants::classical()).unwrap();
        let (s1, s2) = (fit.theta.sigma1_sq, fit.theta.sigma2_sq);
        let h = 1e-4;
        let l0 = restricted_loglik(&y, &design, s1, s2);
        let g1 = (restricted_loglik(&y, &design, s1 * (1.0 + h), s2) - restricted_loglik(&y, &design, s1 * (1.0 - h), s2)) / (2.0 * h);
        let g2 = (restricted_loglik(&y, &design, s1, s2 * (1.0 + h)) - restricted_loglik(&y, &design, s1, s2 * (1.0 - h))) / (2.0 * h);
        assert!(g1.abs() < 1e-5 && g2.abs() < 1e-5, "gradient {g1} {g2}");
        for (a, b) in [(1.05, 1.0), (0.95, 1.0), (1.0, 1.05), (1.0, 0.95), (1.05, 0.95)] {
            assert!(restricted_loglik(&y, &design, s1 * a, s2 * b) < l0);
        }
        // fixed effects are the GLS estimate
        let q = design.q();
        let (mut m, mut xty) = (DMatrix::zeros(q, q), DVector::zeros(q));
        for (yj, x) in y.iter().zip(design.groups()) {
            let gm = GroupMatrices::new(yj.len(), s1, s2).unwrap();
            m += x.transpose() * &gm.v_inv * x;
            xty += x.transpose() * &gm.v_inv * yj;
        }
        let gls = m.cholesky().unwrap().solve(&xty);
        for k in 0..q {
            assert!((gls[k] - fit.theta.alpha[k]).abs() < 1e-6);
        }
    }

    #[test]
    fn vanishing_group_effect_is_floored() {
        let design = LmmDesign::one_way(20, 3).unwrap();
        // alternate large and small within-group spread with identical group
        // means so the between-group component is driven to zero
        let y: LmmResponse = (0..20)
            .map(|j| {
                let s = if j % 2 == 0 { 1.0 } else { -1.0 };
                DVector::from_vec(vec![s, -s, 0.0])
            })
            .collect();
        let fit = lmm_solve(&y, &design, TuningConstants::default()).unwrap();
        assert!(fit.floored[0]);
        assert!(!fit.floored[1]);
        assert!(fit.theta.sigma1_sq > 0.0);
    }

    #[test]
    fn group_order_does_not_matter() {
        let design = LmmDesign::one_way(15, 2).unwrap();
        let th = LmmTheta::new(vec![0.5, 1.0], 1.0, 2.0).unwrap();
        let y = lmm_simulate(&th, &design, ContaminationSpec::none(), &mut RngStream::new(13, 0));
        let perm: Vec<usize> = (0..15).rev().collect();
        let yp: LmmResponse = perm.iter().map(|&i| y[i].clone()).collect();
        let a = lmm_solve(&y, &design, TuningConstants::default()).unwrap().theta.to_vector();
        let b = lmm_solve(&yp, &design.permuted(&perm), TuningConstants::default()).unwrap().theta.to_vector();
        assert!((a - b).amax() < 1e-10);
    }

    #[test]
    fn outlier_moves_robust_fit_less() {
        let design = LmmDesign::one_way(30, 3).unwrap();
        let y = lmm_simulate(&truth(), &design, ContaminationSpec::none(), &mut RngStream::new(14, 0));
        let mut bad = y.clone();
        bad[0][1] += 60.0;
        let shift = |tc: TuningConstants| {
            let a = lmm_solve(&y, &design, tc).unwrap().theta.to_vector();
            let b = lmm_solve(&bad, &design, tc).unwrap().theta.to_vector();
            (a - b).norm()
        };
        assert!(shift(TuningConstants::default()) < 0.5 * shift(TuningConstants::classical()));
    }

    #[test]
    fn rejects_nonconforming_response() {
        let design = LmmDesign::one_way(3, 2).unwrap();
        let y: LmmResponse = vec![DVector::zeros(2), DVector::zeros(2)];
        assert!(matches!(lmm_solve(&y, &design, TuningConstants::default()), Err(Error::InvalidInput(_))));
    }
}
