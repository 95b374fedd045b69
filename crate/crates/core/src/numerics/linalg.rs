use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// A symmetric positive definite matrix, validated on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix {
    m: DMatrix<f64>,
}

/// Which square root [`matrix_sqrt`] returns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SqrtMode {
    /// Lower-triangular `B` with `B Bᵀ = M`.
    LowerCholesky,
    /// The unique symmetric positive definite `B` with `B B = M`.
    SymmetricEigen,
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |a, x| a.max(x.abs()))
}

impl SpdMatrix {
    /// Checks symmetry to 1e-12 relative and positive definiteness.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() || m.nrows() == 0 {
            return Err(Error::InvalidInput(format!(
                "SPD matrix must be square and nonempty, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.iter().any(|x| !x.is_finite()) {
            return Err(Error::NotPositiveDefinite(": non-finite entries".into()));
        }
        let scale = max_abs(&m).max(f64::MIN_POSITIVE);
        let asym = max_abs(&(&m - m.transpose()));
        if asym > 1e-12 * scale {
            return Err(Error::InvalidInput(format!(
                "matrix not symmetric (asymmetry {asym:.3e})"
            )));
        }
        if m.clone().cholesky().is_none() {
            return Err(Error::NotPositiveDefinite(String::new()));
        }
        Ok(Self { m })
    }

    /// Symmetrizes `(M + Mᵀ)/2` before validating.
    pub fn from_symmetrized(m: DMatrix<f64>) -> Result<Self> {
        let s = (&m + m.transpose()) * 0.5;
        Self::new(s)
    }

    pub fn identity(dim: usize) -> Self {
        Self { m: DMatrix::identity(dim, dim) }
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.m
    }

    /// Lower Cholesky factor.
    pub fn cholesky_lower(&self) -> DMatrix<f64> {
        self.m
            .clone()
            .cholesky()
            .expect("validated on construction")
            .l()
    }

    pub fn inverse(&self) -> SpdMatrix {
        let inv = self
            .m
            .clone()
            .cholesky()
            .expect("validated on construction")
            .inverse();
        SpdMatrix { m: (&inv + inv.transpose()) * 0.5 }
    }

    /// Matrix scaled by a positive scalar.
    pub fn scaled(&self, s: f64) -> SpdMatrix {
        assert!(s > 0.0);
        SpdMatrix { m: &self.m * s }
    }
}

/// Matrix square root of an SPD matrix.
///
/// `LowerCholesky` returns `B` with `B Bᵀ = M`; `SymmetricEigen` returns the
/// symmetric root with `B B = M`.
pub fn matrix_sqrt(m: &SpdMatrix, mode: SqrtMode) -> Result<DMatrix<f64>> {
    match mode {
        SqrtMode::LowerCholesky => m
            .m
            .clone()
            .cholesky()
            .map(|c| c.l())
            .ok_or_else(|| Error::NotPositiveDefinite(String::new())),
        SqrtMode::SymmetricEigen => {
            let eig = m.m.clone().symmetric_eigen();
            if eig.eigenvalues.iter().any(|&l| l <= 0.0) {
                return Err(Error::NotPositiveDefinite(": nonpositive eigenvalue".into()));
            }
            let q = &eig.eigenvectors;
            let d = DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt));
            let b = q * d * q.transpose();
            Ok((&b + b.transpose()) * 0.5)
        }
    }
}

/// `‖a − b‖_F / ‖b‖_F`.
pub fn relative_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}
