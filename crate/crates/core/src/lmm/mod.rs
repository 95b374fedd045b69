//! Two-component nested Gaussian linear mixed model.
//!
//! Group `j` has response `y_j = X_j α + β_j 1 + ε_j` with `β_j ~ N(0, σ₁²)`
//! and `ε_j ~ N(0, σ₂² I)`, so `V_j = σ₁² 11ᵀ + σ₂² I`. Groups are
//! independent and all algebra is blockwise.
//!
//! The robust REML II estimating equations are
//!
//! ```text
//! Xᵀ V^{-1/2} ψ_{c1}(r) = 0,                                   r = V^{-1/2}(y − Xα)
//! ½ { ψ_{c2}(r)ᵀ V^{-1/2} Z_i Z_iᵀ V^{-1/2} ψ_{c2}(r) − tr(C P Z_i Z_iᵀ) } = 0,  i = 1, 2
//! ```
//!
//! with `Z_1 Z_1ᵀ = blockdiag(11ᵀ)`, `Z_2 = I`, `C = k(c2) I` and
//! `P = V⁻¹ − V⁻¹X(XᵀV⁻¹X)⁻¹XᵀV⁻¹`. `V^{-1/2}` is the symmetric root.

mod algebra;
pub mod io;
mod solve;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estfun::{EstimatingFunctionModel, TuningConstants};
use crate::numerics::RngStream;
use crate::toy::ContaminationSpec;

pub use algebra::{
    lmm_loglik, lmm_simulate, reml_offset, robust_reml2_psi, robust_reml2_units, GroupMatrices,
    GroupSpectrum, ProjectionTraces,
};
pub use solve::{lmm_solve, lmm_solve_with, LmmFit, SolverOptions, VARIANCE_FLOOR};
pub use io::{
    assemble, generate_synthetic, read_long, read_long_path, write_long, GroupedData, LongRow, SyntheticSpec, ValueTransform,
};

/// Responses, one vector per group.
pub type LmmResponse = Vec<DVector<f64>>;

/// Fixed-effect design of a grouped dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct LmmDesign {
    groups: Vec<DMatrix<f64>>,
    names: Vec<String>,
    unit_ids: Vec<String>,
}

impl LmmDesign {
    /// Validates dimensions, full column rank of the stacked design and
    /// identifiability of the two variance components.
    pub fn new(groups: Vec<DMatrix<f64>>, names: Vec<String>, unit_ids: Vec<String>) -> Result<Self> {
        let q = names.len();
        if groups.is_empty() || q == 0 {
            return Err(Error::InvalidInput("design needs at least one group and one column".into()));
        }
        if unit_ids.len() != groups.len() {
            return Err(Error::InvalidInput("one unit id per group required".into()));
        }
        for (j, x) in groups.iter().enumerate() {
            if x.ncols() != q || x.nrows() == 0 {
                return Err(Error::InvalidInput(format!(
                    "group {j}: design is {}x{}, expected n_j x {q}",
                    x.nrows(),
                    x.ncols()
                )));
            }
        }
        if !groups.iter().any(|x| x.nrows() >= 2) {
            return Err(Error::InvalidInput(
                "variance components are not identifiable without a group of size >= 2".into(),
            ));
        }
        let xtx = groups.iter().fold(DMatrix::zeros(q, q), |acc, x| acc + x.transpose() * x);
        let n: usize = groups.iter().map(|x| x.nrows()).sum();
        let xtx_max = xtx.amax();
        let ok = n > q
            && xtx
                .clone()
                .cholesky()
                .map(|c| c.l().diagonal().iter().all(|&d| d * d > 1e-10 * xtx_max))
                .unwrap_or(false);
        if !ok {
            return Err(Error::RankDeficientX);
        }
        Ok(Self { groups, names, unit_ids })
    }

    /// The one-way layout: `g` groups each observed once at every one of `q`
    /// levels; columns are an intercept and `q − 1` level dummies (level 0 is
    /// the baseline).
    pub fn one_way(g: usize, q: usize) -> Result<Self> {
        if q == 0 || g == 0 {
            return Err(Error::InvalidInput("one-way design needs g >= 1 and q >= 1".into()));
        }
        let x = DMatrix::from_fn(q, q, |row, col| {
            if col == 0 || col == row {
                1.0
            } else {
                0.0
            }
        });
        let mut names = vec!["(Intercept)".to_string()];
        names.extend((1..q).map(|l| format!("level_{l}")));
        let ids = (0..g).map(|j| format!("{}", j + 1)).collect();
        Self::new(vec![x; g], names, ids)
    }

    pub fn groups(&self) -> &[DMatrix<f64>] {
        &self.groups
    }

    pub fn fixed_names(&self) -> &[String] {
        &self.names
    }

    pub fn unit_ids(&self) -> &[String] {
        &self.unit_ids
    }

    /// Number of groups.
    pub fn g(&self) -> usize {
        self.groups.len()
    }

    /// Number of fixed effects.
    pub fn q(&self) -> usize {
        self.names.len()
    }

    /// Parameter dimension `q + 2`.
    pub fn dim(&self) -> usize {
        self.q() + 2
    }

    pub fn n(&self) -> usize {
        self.groups.iter().map(|x| x.nrows()).sum()
    }

    /// The same design with groups reordered by `perm`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            groups: perm.iter().map(|&i| self.groups[i].clone()).collect(),
            names: self.names.clone(),
            unit_ids: perm.iter().map(|&i| self.unit_ids[i].clone()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmmTheta {
    pub alpha: Vec<f64>,
    pub sigma1_sq: f64,
    pub sigma2_sq: f64,
}

impl LmmTheta {
    pub fn new(alpha: Vec<f64>, sigma1_sq: f64, sigma2_sq: f64) -> Result<Self> {
        if !(sigma1_sq > 0.0 && sigma2_sq > 0.0) {
            return Err(Error::InvalidInput("variance components must be positive".into()));
        }
        Ok(Self { alpha, sigma1_sq, sigma2_sq })
    }

    pub fn to_vector(&self) -> DVector<f64> {
        let mut v = self.alpha.clone();
        v.push(self.sigma1_sq);
        v.push(self.sigma2_sq);
        DVector::from_vec(v)
    }

    pub fn from_vector(v: &DVector<f64>) -> Self {
        let q = v.len() - 2;
        Self { alpha: v.rows(0, q).iter().copied().collect(), sigma1_sq: v[q], sigma2_sq: v[q + 1] }
    }
}

/// Which consistency correction the variance equations use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum VarianceCorrection {
    /// `tr(C P Z_i Z_iᵀ)`: the REML-type correction.
    #[default]
    Reml,
    /// `tr(C V⁻¹ Z_i Z_iᵀ)`: unbiased at a fixed `θ`, ML-type.
    Ml,
}

/// The robust REML II estimating function for a fixed design.
#[derive(Debug, Clone)]
pub struct LmmModel {
    pub design: Arc<LmmDesign>,
    pub tc: TuningConstants,
    pub correction: VarianceCorrection,
}

impl LmmModel {
    pub fn new(design: Arc<LmmDesign>, tc: TuningConstants) -> Self {
        Self { design, tc, correction: VarianceCorrection::Reml }
    }

    pub fn with_correction(mut self, correction: VarianceCorrection) -> Self {
        self.correction = correction;
        self
    }

    pub fn simulate_contaminated(
        &self,
        theta: &DVector<f64>,
        cont: ContaminationSpec,
        rng: &mut RngStream,
    ) -> LmmResponse {
        lmm_simulate(&LmmTheta::from_vector(theta), &self.design, cont, rng)
    }
}

impl EstimatingFunctionModel for LmmModel {
    type Data = LmmResponse;

    fn dim(&self) -> usize {
        self.design.dim()
    }

    fn param_names(&self) -> Vec<String> {
        let mut v = self.design.fixed_names().to_vec();
        v.push("sigma1_sq".into());
        v.push("sigma2_sq".into());
        v
    }

    fn positive_mask(&self) -> Vec<bool> {
        let mut v = vec![false; self.design.q()];
        v.extend([true, true]);
        v
    }

    fn simulate(&self, theta: &DVector<f64>, rng: &mut RngStream) -> LmmResponse {
        self.simulate_contaminated(theta, ContaminationSpec::none(), rng)
    }

    fn psi_units(&self, y: &LmmResponse, theta: &DVector<f64>) -> Vec<DVector<f64>> {
        robust_reml2_units(y, &self.design, &LmmTheta::from_vector(theta), self.tc, self.correction)
            .expect("admissible theta")
    }

    fn data_part(&self, y: &LmmResponse, theta: &DVector<f64>) -> DVector<f64> {
        algebra::data_part(y, &self.design, &LmmTheta::from_vector(theta), self.tc)
    }

    fn correction_part(&self, theta: &DVector<f64>) -> DVector<f64> {
        algebra::correction_part(&self.design, &LmmTheta::from_vector(theta), self.tc, self.correction)
            .expect("admissible theta")
    }

    fn solve(&self, y: &LmmResponse) -> Result<DVector<f64>> {
        let fit = lmm_solve_with(y, &self.design, self.tc, &SolverOptions { correction: self.correction, ..Default::default() })?;
        Ok(fit.theta.to_vector())
    }
}
