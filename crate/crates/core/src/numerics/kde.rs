use super::{norm_pdf, quantile_sorted, sorted_copy};
use crate::error::{Error, Result};

/// Silverman's rule-of-thumb bandwidth `0.9 min(sd, IQR/1.34) n^(-1/5)`.
///
/// Falls back to the standard deviation when the IQR is zero.
pub fn silverman_bandwidth(samples: &[f64]) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::DegenerateSample("need at least two samples".into()));
    }
    let sorted = sorted_copy(samples);
    if sorted[0] == sorted[sorted.len() - 1] {
        return Err(Error::DegenerateSample("all samples identical".into()));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let sd = (samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    Ok(0.9 * spread * n.powf(-0.2))
}

/// Gaussian kernel density estimate.
#[derive(Debug, Clone)]
pub struct Kde {
    sorted: Vec<f64>,
    bandwidth: f64,
}

// Kernel contributions beyond this many bandwidths are below 1e-19.
const CUTOFF: f64 = 9.5;

impl Kde {
    pub fn new(samples: &[f64]) -> Result<Self> {
        let bandwidth = silverman_bandwidth(samples)?;
        Ok(Self { sorted: sorted_copy(samples), bandwidth })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.sorted[0]
    }

    pub fn max(&self) -> f64 {
        self.sorted[self.sorted.len() - 1]
    }

    pub fn density(&self, x: f64) -> f64 {
        let h = self.bandwidth;
        let lo = self.sorted.partition_point(|&s| s < x - CUTOFF * h);
        let hi = self.sorted.partition_point(|&s| s <= x + CUTOFF * h);
        let sum: f64 = self.sorted[lo..hi].iter().map(|&s| norm_pdf((x - s) / h)).sum();
        sum / (self.sorted.len() as f64 * h)
    }
}

/// Density estimate at `x` from `samples`.
pub fn kde_density(samples: &[f64], x: f64) -> Result<f64> {
    Ok(Kde::new(samples)?.density(x))
}
