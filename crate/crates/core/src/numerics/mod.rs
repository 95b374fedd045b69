//! Linear-algebra and stochastic primitives shared by every model.

mod kde;
mod linalg;
mod quadrature;
mod random;
mod rng;

pub use kde::{kde_density, silverman_bandwidth, Kde};
pub use linalg::{matrix_sqrt, relative_frobenius, SpdMatrix, SqrtMode};
pub use quadrature::{gauss_quadrature, integrate, Quadrature};
pub use random::{draw_mvn, draw_mvt, MvnSampler, MvtSampler};
pub use rng::{fnv1a64, RngStream};

use libm::erfc;

pub const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Standard normal density.
pub fn norm_pdf(z: f64) -> f64 {
    (-0.5 * z * z - 0.5 * LN_2PI).exp()
}

/// Standard normal distribution function.
pub fn norm_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Sample quantile with linear interpolation between order statistics
/// (Hyndman-Fan type 7). `sorted` must be ascending and nonempty.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Sorts a copy of `xs` (NaN-free input assumed).
pub fn sorted_copy(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    v
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

pub fn median(xs: &[f64]) -> f64 {
    quantile_sorted(&sorted_copy(xs), 0.5)
}
