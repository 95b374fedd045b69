use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::numerics::SpdMatrix;

/// Unconstrained coordinates: `z = log θ` for positive parameters, `z = θ`
/// otherwise.
#[derive(Debug, Clone)]
pub struct LogTransform {
    positive: Vec<bool>,
}

impl LogTransform {
    pub fn new(positive: Vec<bool>) -> Self {
        Self { positive }
    }

    pub fn to_z(&self, theta: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            theta.len(),
            theta.iter().zip(&self.positive).map(|(&t, &p)| if p { t.ln() } else { t }),
        )
    }

    pub fn to_theta(&self, z: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(z.len(), z.iter().zip(&self.positive).map(|(&v, &p)| if p { v.exp() } else { v }))
    }

    /// `log |dθ/dz| = Σ_{positive} z_k`.
    pub fn log_jacobian(&self, z: &DVector<f64>) -> f64 {
        z.iter().zip(&self.positive).filter(|(_, &p)| p).map(|(v, _)| v).sum()
    }

    /// Maps a covariance in `θ` coordinates at `θ` to `z` coordinates by the
    /// delta method, `D S D` with `D = diag(dz/dθ)`.
    pub fn covariance_to_z(&self, theta: &DVector<f64>, s: &DMatrix<f64>) -> Result<SpdMatrix> {
        let d = DVector::from_iterator(
            theta.len(),
            theta.iter().zip(&self.positive).map(|(&t, &p)| if p { 1.0 / t } else { 1.0 }),
        );
        let dsd = DMatrix::from_fn(s.nrows(), s.ncols(), |i, j| d[i] * s[(i, j)] * d[j]);
        SpdMatrix::from_symmetrized(dsd)
    }
}
