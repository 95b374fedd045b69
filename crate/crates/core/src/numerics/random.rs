use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use super::{RngStream, SpdMatrix};
use crate::error::{Error, Result};

fn standard_normal_vector<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_iterator(dim, (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

/// Multivariate normal sampler with a cached Cholesky factor.
#[derive(Debug, Clone)]
pub struct MvnSampler {
    mean: DVector<f64>,
    chol: DMatrix<f64>,
}

impl MvnSampler {
    pub fn new(mean: DVector<f64>, cov: &SpdMatrix) -> Result<Self> {
        if mean.len() != cov.dim() {
            return Err(Error::InvalidInput(format!(
                "mean has length {} but covariance is {}x{}",
                mean.len(),
                cov.dim(),
                cov.dim()
            )));
        }
        Ok(Self { mean, chol: cov.cholesky_lower() })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = standard_normal_vector(self.mean.len(), rng);
        &self.mean + &self.chol * z
    }
}

/// Multivariate t sampler: `center + B z sqrt(df / w)` with `B Bᵀ = scale`,
/// `z` standard normal and `w ~ χ²(df)`.
#[derive(Debug, Clone)]
pub struct MvtSampler {
    center: DVector<f64>,
    chol: DMatrix<f64>,
    chi2: ChiSquared<f64>,
    df: f64,
}

impl MvtSampler {
    pub fn new(center: DVector<f64>, scale: &SpdMatrix, df: u32) -> Result<Self> {
        if df == 0 {
            return Err(Error::InvalidInput("t degrees of freedom must be >= 1".into()));
        }
        if center.len() != scale.dim() {
            return Err(Error::InvalidInput("center/scale dimension mismatch".into()));
        }
        let df = f64::from(df);
        Ok(Self {
            center,
            chol: scale.cholesky_lower(),
            chi2: ChiSquared::new(df).expect("df > 0"),
            df,
        })
    }

    pub fn set_center(&mut self, center: &DVector<f64>) {
        self.center.copy_from(center);
    }

    /// Zero-centered increment `B z sqrt(df / w)`.
    pub fn increment<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = standard_normal_vector(self.center.len(), rng);
        let w: f64 = self.chi2.sample(rng);
        &self.chol * z * (self.df / w).sqrt()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        &self.center + self.increment(rng)
    }
}

/// One multivariate normal draw.
pub fn draw_mvn(mean: &DVector<f64>, cov: &SpdMatrix, rng: &mut RngStream) -> Result<DVector<f64>> {
    Ok(MvnSampler::new(mean.clone(), cov)?.sample(rng))
}

/// One multivariate t draw with `df` degrees of freedom.
pub fn draw_mvt(
    center: &DVector<f64>,
    scale: &SpdMatrix,
    df: u32,
    rng: &mut RngStream,
) -> Result<DVector<f64>> {
    Ok(MvtSampler::new(center.clone(), scale, df)?.sample(rng))
}
