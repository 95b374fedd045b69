//! Normal location-scale model with Huber Proposal-2 estimating equations.
//!
//! With `z_i = (y_i − μ)/σ` the equations are
//! `Ψ_μ = Σ ψ_{c1}(z_i)` and `Ψ_σ = Σ (ψ_{c2}(z_i)² − k(c2))`, so the data part
//! is `(Σψ_{c1}(z_i), Σψ_{c2}(z_i)²)` and the correction is `(0, n k(c2))`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estfun::{
    consistency_k, huber_psi, huber_psi_deriv, huber_weight, EstimatingFunctionModel,
    TuningConstants,
};
use crate::numerics::{median, Quadrature, RngStream, SpdMatrix, LN_2PI};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyTheta {
    pub mu: f64,
    pub sigma: f64,
}

impl ToyTheta {
    pub fn new(mu: f64, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !mu.is_finite() || !sigma.is_finite() {
            return Err(Error::InvalidInput(format!("invalid toy parameter ({mu}, {sigma})")));
        }
        Ok(Self { mu, sigma })
    }

    pub fn to_vector(self) -> DVector<f64> {
        DVector::from_vec(vec![self.mu, self.sigma])
    }

    pub fn from_vector(v: &DVector<f64>) -> Self {
        Self { mu: v[0], sigma: v[1] }
    }
}

/// Gross-error contamination: with probability `epsilon` a unit (or group)
/// is drawn with its variance multiplied by `inflation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContaminationSpec {
    pub epsilon: f64,
    pub inflation: f64,
}

impl ContaminationSpec {
    pub fn new(epsilon: f64, inflation: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&epsilon) && epsilon != 1.0 {
            return Err(Error::InvalidInput(format!("epsilon must lie in [0, 1), got {epsilon}")));
        }
        if !(inflation > 0.0) {
            return Err(Error::InvalidInput(format!("inflation must be positive, got {inflation}")));
        }
        Ok(Self { epsilon, inflation })
    }

    pub fn none() -> Self {
        Self { epsilon: 0.0, inflation: 1.0 }
    }

    pub fn is_none(&self) -> bool {
        self.epsilon == 0.0
    }
}

/// Per-unit contributions `(ψ_{c1}(z_i), ψ_{c2}(z_i)² − k(c2))`.
pub fn toy_psi_units(y: &[f64], theta: ToyTheta, tc: TuningConstants) -> Vec<[f64; 2]> {
    let k2 = consistency_k(tc.c2);
    y.iter()
        .map(|&yi| {
            let z = (yi - theta.mu) / theta.sigma;
            let p2 = huber_psi(z, tc.c2);
            [huber_psi(z, tc.c1), p2 * p2 - k2]
        })
        .collect()
}

/// Data part `(Σψ_{c1}(z_i), Σψ_{c2}(z_i)²)`.
pub fn toy_data_part(y: &[f64], theta: ToyTheta, tc: TuningConstants) -> [f64; 2] {
    let mut a = [0.0; 2];
    for &yi in y {
        let z = (yi - theta.mu) / theta.sigma;
        let p2 = huber_psi(z, tc.c2);
        a[0] += huber_psi(z, tc.c1);
        a[1] += p2 * p2;
    }
    a
}

/// `Ψ(y; θ)`.
pub fn toy_psi(y: &[f64], theta: ToyTheta, tc: TuningConstants) -> [f64; 2] {
    let a = toy_data_part(y, theta, tc);
    [a[0], a[1] - y.len() as f64 * consistency_k(tc.c2)]
}

const SOLVE_MAX_ITER: usize = 200;

/// Huber Proposal-2 estimate by alternating IRLS from the median/MAD start.
///
/// `μ ← Σ w_i y_i / Σ w_i`, then `σ² ← σ² Σψ_{c2}(z_i)² / (n k(c2))`.
pub fn toy_solve(y: &[f64], tc: TuningConstants) -> Result<ToyTheta> {
    toy_solve_with(y, tc, SOLVE_MAX_ITER)
}

pub fn toy_solve_with(y: &[f64], tc: TuningConstants, max_iter: usize) -> Result<ToyTheta> {
    let n = y.len();
    if n < 2 {
        return Err(Error::InvalidInput("toy model needs at least two observations".into()));
    }
    let med = median(y);
    let abs_dev: Vec<f64> = y.iter().map(|v| (v - med).abs()).collect();
    let mad = median(&abs_dev);
    if !(mad > 0.0) {
        return Err(Error::DegenerateSample("median absolute deviation is zero".into()));
    }
    let nk = n as f64 * consistency_k(tc.c2);
    let mut mu = med;
    let mut s2 = (mad / 0.674_489_750_196_081_7).powi(2);
    for _ in 0..max_iter {
        let sigma = s2.sqrt();
        let (mut sw, mut swy) = (0.0, 0.0);
        for &yi in y {
            let w = huber_weight((yi - mu) / sigma, tc.c1);
            sw += w;
            swy += w * yi;
        }
        let mu_new = swy / sw;
        let s: f64 = y
            .iter()
            .map(|&yi| huber_psi((yi - mu_new) / sigma, tc.c2).powi(2))
            .sum();
        let s2_new = s2 * s / nk;
        let step = ((mu_new - mu).abs() / sigma).max((s2_new / s2 - 1.0).abs());
        mu = mu_new;
        s2 = s2_new;
        let theta = ToyTheta { mu, sigma: s2.sqrt() };
        let psi = toy_psi(y, theta, tc);
        let res = psi[0].abs().max(psi[1].abs());
        if res <= 1e-12 || (step <= 4.0 * f64::EPSILON && res <= 1e-8) {
            return Ok(theta);
        }
    }
    let theta = ToyTheta { mu, sigma: s2.sqrt() };
    let psi = toy_psi(y, theta, tc);
    if psi[0].abs().max(psi[1].abs()) <= 1e-8 {
        Ok(theta)
    } else {
        Err(Error::NoConvergence { what: "toy IRLS".into(), iterations: max_iter })
    }
}

/// `n` draws from `(1−ε) N(μ, σ²) + ε N(μ, inflation·σ²)`.
pub fn toy_simulate(theta: ToyTheta, n: usize, cont: ContaminationSpec, rng: &mut RngStream) -> Vec<f64> {
    let wide = theta.sigma * cont.inflation.sqrt();
    (0..n)
        .map(|_| {
            let sd = if cont.epsilon > 0.0 && rng.random::<f64>() < cont.epsilon {
                wide
            } else {
                theta.sigma
            };
            let z: f64 = rng.sample(StandardNormal);
            theta.mu + sd * z
        })
        .collect()
}

/// Normal log-likelihood of `y` at `θ`.
pub fn toy_loglik(y: &[f64], theta: ToyTheta) -> f64 {
    let n = y.len() as f64;
    let ss: f64 = y.iter().map(|&v| ((v - theta.mu) / theta.sigma).powi(2)).sum();
    -0.5 * n * LN_2PI - n * theta.sigma.ln() - 0.5 * ss
}

/// Closed-form `H` and `J` at the central normal model for a sample of size `n`.
///
/// Both are diagonal: `J = n diag(E ψ_{c1}², E(ψ_{c2}² − k)²)` and
/// `H = (n/σ) diag(E ψ'_{c1}, 2 E[Z ψ_{c2} ψ'_{c2}])`, each expectation by
/// quadrature against the normal density.
pub fn toy_analytic_hj(theta: ToyTheta, tc: TuningConstants, n: usize) -> Result<(SpdMatrix, SpdMatrix)> {
    let q = Quadrature::default();
    let (c1, c2) = (tc.c1, tc.c2);
    let k2 = consistency_k(c2);
    let j11 = q.normal_expectation_with_breaks(|z| huber_psi(z, c1).powi(2), &[-c1, c1])?;
    let j22 = q.normal_expectation_with_breaks(|z| (huber_psi(z, c2).powi(2) - k2).powi(2), &[-c2, c2])?;
    let h11 = q.normal_expectation_with_breaks(|z| huber_psi_deriv(z, c1), &[-c1, c1])?;
    let h22 = q.normal_expectation_with_breaks(
        |z| 2.0 * z * huber_psi(z, c2) * huber_psi_deriv(z, c2),
        &[-c2, c2],
    )?;
    let nf = n as f64;
    let h = SpdMatrix::from_diagonal(&[nf * h11 / theta.sigma, nf * h22 / theta.sigma])?;
    let j = SpdMatrix::from_diagonal(&[nf * j11, nf * j22])?;
    Ok((h, j))
}

/// The toy model for a fixed sample size.
#[derive(Debug, Clone, Copy)]
pub struct ToyModel {
    pub n: usize,
    pub tc: TuningConstants,
}

impl ToyModel {
    pub fn new(n: usize, tc: TuningConstants) -> Self {
        Self { n, tc }
    }

    /// Analytic `(H, J)` at `θ`.
    pub fn analytic_hj(&self, theta: &DVector<f64>) -> Result<(SpdMatrix, SpdMatrix)> {
        toy_analytic_hj(ToyTheta::from_vector(theta), self.tc, self.n)
    }

    /// Analytic `K = H⁻¹ J H⁻¹`.
    pub fn analytic_k(&self, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        let (h, j) = self.analytic_hj(theta)?;
        let hi = h.inverse();
        Ok(hi.matrix() * j.matrix() * hi.matrix())
    }
}

impl EstimatingFunctionModel for ToyModel {
    type Data = Vec<f64>;

    fn dim(&self) -> usize {
        2
    }

    fn param_names(&self) -> Vec<String> {
        vec!["mu".into(), "sigma".into()]
    }

    fn positive_mask(&self) -> Vec<bool> {
        vec![false, true]
    }

    fn simulate(&self, theta: &DVector<f64>, rng: &mut RngStream) -> Vec<f64> {
        toy_simulate(ToyTheta::from_vector(theta), self.n, ContaminationSpec::none(), rng)
    }

    fn psi_units(&self, y: &Vec<f64>, theta: &DVector<f64>) -> Vec<DVector<f64>> {
        toy_psi_units(y, ToyTheta::from_vector(theta), self.tc)
            .into_iter()
            .map(|u| DVector::from_vec(u.to_vec()))
            .collect()
    }

    fn data_part(&self, y: &Vec<f64>, theta: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(toy_data_part(y, ToyTheta::from_vector(theta), self.tc).to_vec())
    }

    fn correction_part(&self, _theta: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(vec![0.0, self.n as f64 * consistency_k(self.tc.c2)])
    }

    fn solve(&self, y: &Vec<f64>) -> Result<DVector<f64>> {
        Ok(toy_solve(y, self.tc)?.to_vector())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estfun::sum_units;
    use crate::numerics::{gauss_quadrature, mean, variance};
    use proptest::prelude::*;

    fn tc() -> TuningConstants {
        TuningConstants::default()
    }

    #[test]
    fn symmetric_data_gives_zero_location_equation() {
        let y = [-1.0, 0.0, 1.0];
        for c in [0.5, 1.345, 3.0] {
            let u = toy_psi_units(&y, ToyTheta { mu: 0.0, sigma: 1.0 }, TuningConstants::new(c, c).unwrap());
            assert_eq!(u.iter().map(|v| v[0]).sum::<f64>(), 0.0);
        }
        let th = toy_solve(&y, tc()).unwrap();
        assert_eq!(th.mu, 0.0);
    }

    #[test]
    fn single_point_at_center() {
        let u = toy_psi_units(&[0.0], ToyTheta { mu: 0.0, sigma: 1.0 }, tc());
        let k = gauss_quadrature(|z| (z * z).min(2.07f64 * 2.07)).unwrap();
        assert!((u[0][1] + k).abs() < 1e-10);
    }

    #[test]
    fn units_sum_to_psi() {
        let mut rng = RngStream::new(3, 0);
        let m = ToyModel::new(50, tc());
        let theta = DVector::from_vec(vec![0.3, 1.4]);
        let y = m.simulate(&theta, &mut rng);
        let s = sum_units(&m.psi_units(&y, &theta), 2);
        assert!((s - m.psi(&y, &theta)).amax() < 1e-10);
    }

    #[test]
    fn monte_carlo_unbiasedness() {
        let mut rng = RngStream::new(21, 0);
        let y = toy_simulate(ToyTheta { mu: 0.0, sigma: 1.0 }, 10_000, ContaminationSpec::none(), &mut rng);
        let u = toy_psi_units(&y, ToyTheta { mu: 0.0, sigma: 1.0 }, tc());
        for k in 0..2 {
            let xs: Vec<f64> = u.iter().map(|v| v[k]).collect();
            let se = (variance(&xs) / xs.len() as f64).sqrt();
            assert!(mean(&xs).abs() < 4.0 * se, "coordinate {k}");
        }
    }

    #[test]
    fn consistent_at_central_model() {
        let mut rng = RngStream::new(5, 0);
        let y = toy_simulate(ToyTheta { mu: 0.0, sigma: 1.0 }, 5000, ContaminationSpec::none(), &mut rng);
        let th = toy_solve(&y, tc()).unwrap();
        assert!(th.mu.abs() < 0.05 && (th.sigma - 1.0).abs() < 0.05, "{th:?}");
    }

    #[test]
    fn solve_certificate() {
        let mut rng = RngStream::new(6, 0);
        for n in [5, 31, 200] {
            let y = toy_simulate(ToyTheta { mu: 1.0, sigma: 2.0 }, n, ContaminationSpec::new(0.1, 10.0).unwrap(), &mut rng);
            let th = toy_solve(&y, tc()).unwrap();
            let p = toy_psi(&y, th, tc());
            assert!(p[0].abs().max(p[1].abs()) <= 1e-8);
        }
    }

    // Brute-force root oracle: scan μ on a grid for the location equation at
    // a fixed σ, then refine by bisection; alternate with a bisection on σ.
    fn grid_root(y: &[f64], tc: TuningConstants) -> ToyTheta {
        let bisect = |f: &dyn Fn(f64) -> f64, mut lo: f64, mut hi: f64| {
            let flo = f(lo);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if (f(mid) > 0.0) == (flo > 0.0) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        };
        let (ymin, ymax) = y.iter().fold((f64::MAX, f64::MIN), |a, &v| (a.0.min(v), a.1.max(v)));
        let mut th = ToyTheta { mu: median(y), sigma: 1.0 };
        for _ in 0..200 {
            let s = th.sigma;
            let mu = bisect(&|m| toy_psi(y, ToyTheta { mu: m, sigma: s }, tc)[0], ymin - 1.0, ymax + 1.0);
            let sigma = bisect(&|sg| toy_psi(y, ToyTheta { mu, sigma: sg }, tc)[1], 1e-6, (ymax - ymin) * 10.0);
            th = ToyTheta { mu, sigma };
        }
        th
    }

    #[test]
    fn bounded_influence_of_outlier() {
        let mut rng = RngStream::new(8, 0);
        let y0 = toy_simulate(ToyTheta { mu: 0.0, sigma: 1.0 }, 30, ContaminationSpec::none(), &mut rng);
        let mut y1 = y0.clone();
        y1.push(50.0);
        let f0 = toy_solve(&y0, tc()).unwrap();
        let f1 = toy_solve(&y1, tc()).unwrap();
        let oracle = grid_root(&y1, tc());
        assert!((f1.mu - oracle.mu).abs() < 1e-8 && (f1.sigma - oracle.sigma).abs() < 1e-8);
        assert!(f1.mu.abs() < mean(&y1).abs());
        // Bounded influence: one point at +50 moves μ̃ by about c1 σ̃ / (n P(|z|<c1)),
        // far less than the (50 − ȳ)/n shift of the mean.
        let bound = tc().c1 * f1.sigma / 31.0 * 1.5;
        assert!((f1.mu - f0.mu).abs() < bound, "{} vs {}", (f1.mu - f0.mu).abs(), bound);
    }

    #[test]
    fn classical_limit() {
        let mut rng = RngStream::new(9, 0);
        let y = toy_simulate(ToyTheta { mu: 2.0, sigma: 3.0 }, 40, ContaminationSpec::none(), &mut rng);
        let th = toy_solve(&y, TuningConstants::classical()).unwrap();
        let m = mean(&y);
        let s = (y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 40.0).sqrt();
        assert!((th.mu - m).abs() < 1e-6 && (th.sigma - s).abs() < 1e-6);
    }

    #[test]
    fn degenerate_sample_rejected() {
        assert!(matches!(toy_solve(&[1.0, 1.0, 1.0, 2.0], tc()), Err(Error::DegenerateSample(_))));
    }

    #[test]
    fn simulate_moments() {
        let mut rng = RngStream::new(10, 0);
        let th = ToyTheta { mu: 0.0, sigma: 1.0 };
        let y = toy_simulate(th, 5, ContaminationSpec::none(), &mut rng);
        assert_eq!(y.len(), 5);
        let y = toy_simulate(th, 10_000, ContaminationSpec::new(1.0, 10.0).unwrap(), &mut rng);
        assert!((variance(&y) / 10.0 - 1.0).abs() < 0.10);
        let y = toy_simulate(th, 100_000, ContaminationSpec::new(0.1, 10.0).unwrap(), &mut rng);
        assert!((variance(&y) / 1.9 - 1.0).abs() < 0.05, "{}", variance(&y));
    }

    #[test]
    fn analytic_hj_values() {
        let th = ToyTheta { mu: 0.0, sigma: 1.0 };
        let (h, j) = toy_analytic_hj(th, tc(), 1).unwrap();
        assert!((j.matrix()[(0, 0)] - consistency_k(1.345)).abs() < 1e-10);
        assert_eq!(j.matrix()[(0, 1)], 0.0);
        assert_eq!(h.matrix()[(1, 0)], 0.0);
        // efficiencies quoted for c1 = 1.345 and c2 = 2.07: about 95% and 90%
        let k = ToyModel::new(1, tc()).analytic_k(&th.to_vector()).unwrap();
        let eff_mu = 1.0 / k[(0, 0)];
        let eff_sigma = 0.5 / k[(1, 1)];
        assert!((eff_mu - 0.95).abs() < 0.005, "{eff_mu}");
        assert!((eff_sigma - 0.90).abs() < 0.02, "{eff_sigma}");
    }

    #[test]
    fn analytic_j_matches_monte_carlo() {
        let th = ToyTheta { mu: 0.0, sigma: 1.0 };
        let (_, j) = toy_analytic_hj(th, tc(), 1).unwrap();
        let mut rng = RngStream::new(12, 0);
        let y = toy_simulate(th, 100_000, ContaminationSpec::none(), &mut rng);
        let u = toy_psi_units(&y, th, tc());
        let n = u.len() as f64;
        let j11 = u.iter().map(|v| v[0] * v[0]).sum::<f64>() / n;
        let j22 = u.iter().map(|v| v[1] * v[1]).sum::<f64>() / n;
        assert!((j11 / j.matrix()[(0, 0)] - 1.0).abs() < 0.02);
        assert!((j22 / j.matrix()[(1, 1)] - 1.0).abs() < 0.02);
    }

    #[test]
    fn correction_cancels_in_data_part_difference() {
        let mut rng = RngStream::new(13, 0);
        let th = ToyTheta { mu: 0.2, sigma: 1.1 };
        let y = toy_simulate(th, 25, ContaminationSpec::none(), &mut rng);
        let ys = toy_simulate(th, 25, ContaminationSpec::none(), &mut rng);
        for c2 in [1.0, 2.07, 4.0] {
            let t = TuningConstants::new(1.345, c2).unwrap();
            let a = toy_data_part(&y, th, t);
            let b = toy_data_part(&ys, th, t);
            let p = toy_psi(&y, th, t);
            let q = toy_psi(&ys, th, t);
            assert!(((a[1] - b[1]) - (p[1] - q[1])).abs() < 1e-12);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn affine_equivariance(seed in any::<u64>(), a in -10.0f64..10.0, b in prop_oneof![-5.0f64..-0.2, 0.2f64..5.0]) {
            let mut rng = RngStream::new(seed, 0);
            let y = toy_simulate(ToyTheta { mu: 0.0, sigma: 1.0 }, 25, ContaminationSpec::new(0.1, 10.0).unwrap(), &mut rng);
            let t = toy_solve(&y, tc()).unwrap();
            let yt: Vec<f64> = y.iter().map(|v| a + b * v).collect();
            let tt = toy_solve(&yt, tc()).unwrap();
            prop_assert!((tt.mu - (a + b * t.mu)).abs() < 1e-8);
            prop_assert!((tt.sigma - b.abs() * t.sigma).abs() < 1e-8);
        }
    }
}
