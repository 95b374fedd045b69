use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Kde;

pub const MIN_FBST_DRAWS: usize = 1000;

// Density is tabulated on this many points and interpolated at the draws.
const GRID: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceResult {
    pub parameter: String,
    pub e_value: f64,
    pub bandwidth: f64,
    pub n_draws: usize,
}

impl EvidenceResult {
    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.parameter = name.into();
        self
    }
}

/// FBST evidence for `θ = theta0` from scalar posterior draws.
///
/// The marginal density is a Gaussian KDE with Silverman bandwidth; the
/// e-value is the share of draws whose estimated density does not exceed the
/// estimate at `theta0`.
pub fn fbst_evidence(draws: &[f64], theta0: f64) -> Result<EvidenceResult> {
    if draws.len() < MIN_FBST_DRAWS {
        return Err(Error::DegenerateSample(format!(
            "FBST needs at least {MIN_FBST_DRAWS} draws, got {}",
            draws.len()
        )));
    }
    if draws.iter().any(|x| !x.is_finite()) || !theta0.is_finite() {
        return Err(Error::InvalidInput("non-finite draw or null value".into()));
    }
    let kde = Kde::new(draws)?;
    let (lo, hi) = (kde.min(), kde.max());
    let step = (hi - lo) / (GRID - 1) as f64;
    let table: Vec<f64> = (0..GRID).map(|i| kde.density(lo + step * i as f64)).collect();
    let at = |x: f64| -> f64 {
        let t = ((x - lo) / step).clamp(0.0, (GRID - 1) as f64);
        let i = (t.floor() as usize).min(GRID - 2);
        let w = t - i as f64;
        table[i] * (1.0 - w) + table[i + 1] * w
    };
    let f0 = kde.density(theta0);
    let below = draws.iter().filter(|&&x| at(x) <= f0).count();
    Ok(EvidenceResult {
        parameter: String::new(),
        e_value: below as f64 / draws.len() as f64,
        bandwidth: kde.bandwidth(),
        n_draws: draws.len(),
    })
}
