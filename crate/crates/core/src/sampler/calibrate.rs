use serde::{Deserialize, Serialize};

use super::{abcr_mcmc, AbcrConfig, SummaryContext};
use crate::baselines::PriorSpec;
use crate::error::{Error, Result};
use crate::estfun::EstimatingFunctionModel;
use crate::numerics::RngStream;
use crate::par;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationConfig {
    pub target_rate: f64,
    pub grid_points: usize,
    /// Grid end points, multiplied by the parameter dimension.
    pub grid_lower: f64,
    pub grid_upper: f64,
    pub max_bisections: usize,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self { target_rate: 0.01, grid_points: 15, grid_lower: 1e-4, grid_upper: 10.0, max_bisections: 8 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Calibration {
    pub h: f64,
    /// Acceptance rate of the pilot run at `h`.
    pub measured_rate: f64,
    /// `(h, pilot acceptance rate)` over the grid.
    pub grid: Vec<(f64, f64)>,
    /// Nondecreasing fit of the grid rates.
    pub fitted: Vec<f64>,
    pub pilot_runs: usize,
}

/// Least-squares nondecreasing fit (pool adjacent violators, equal weights).
pub fn isotonic_increasing(values: &[f64]) -> Vec<f64> {
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(values.len());
    for &v in values {
        blocks.push((v, 1));
        while blocks.len() > 1 {
            let (b, nb) = blocks[blocks.len() - 1];
            let (a, na) = blocks[blocks.len() - 2];
            if a <= b {
                break;
            }
            blocks.pop();
            let n = na + nb;
            *blocks.last_mut().unwrap() = ((a * na as f64 + b * nb as f64) / n as f64, n);
        }
    }
    blocks.into_iter().flat_map(|(v, n)| std::iter::repeat_n(v, n)).collect()
}

/// Chooses the kernel scale `h` whose pilot acceptance rate is near
/// `target_rate`.
///
/// Rates are measured after the pilot's burn-in: a chain started from a
/// freshly simulated summary accepts more often than one at stationarity,
/// where the kernel has already selected small summaries.
///
/// Pilot chains run over a log-spaced grid; a monotone fit of rate against
/// `log h` is interpolated at the target, the candidate is verified with a
/// fresh pilot, and the bracket is bisected (geometrically) until a pilot
/// lands in `[target/2, 2 target]`.
pub fn calibrate_h<M: EstimatingFunctionModel>(
    model: &M,
    prior: &PriorSpec,
    ctx: &SummaryContext,
    pilot_cfg: &AbcrConfig,
    cal: &CalibrationConfig,
    rng: &RngStream,
) -> Result<Calibration> {
    let target = cal.target_rate;
    if !(target > 0.0 && target < 0.5) {
        return Err(Error::InvalidInput(format!("target rate must lie in (0, 0.5), got {target}")));
    }
    if pilot_cfg.n_iter.saturating_sub(pilot_cfg.burn_in) < 2000 {
        return Err(Error::InvalidInput("pilot chains need at least 2000 iterations after burn-in".into()));
    }
    if cal.grid_points < 2 || !(cal.grid_lower > 0.0 && cal.grid_upper > cal.grid_lower) {
        return Err(Error::InvalidInput("calibration grid needs >= 2 points and 0 < lower < upper".into()));
    }
    let d = model.dim() as f64;
    let (lo, hi) = ((cal.grid_lower * d).ln(), (cal.grid_upper * d).ln());
    let n = cal.grid_points;
    let hs: Vec<f64> = (0..n).map(|i| (lo + (hi - lo) * i as f64 / (n - 1) as f64).exp()).collect();

    let pilot = |h: f64, stream: u64| -> Result<f64> {
        let mut r = rng.derive(stream);
        Ok(abcr_mcmc(model, prior, ctx, &pilot_cfg.with_h(h), &mut r)?.meta.post_burn_in_acceptance)
    };
    let rates = par::map_indexed(n, |i| pilot(hs[i], i as u64)).into_iter().collect::<Result<Vec<f64>>>()?;
    let fitted = isotonic_increasing(&rates);
    let grid: Vec<(f64, f64)> = hs.iter().copied().zip(rates.iter().copied()).collect();
    log::debug!("calibration grid: {grid:?}");

    let Some(upper) = fitted.iter().position(|&r| r >= target) else {
        return Err(Error::CalibrationFailed(format!(
            "largest grid h = {:.3e} accepts at rate {:.4} < target {target}",
            hs[n - 1],
            rates[n - 1]
        )));
    };
    if upper == 0 {
        return Err(Error::CalibrationFailed(format!(
            "smallest grid h = {:.3e} already accepts at rate {:.4} >= target {target}",
            hs[0], rates[0]
        )));
    }
    let (mut h_lo, mut h_hi) = (hs[upper - 1], hs[upper]);
    let (f_lo, f_hi) = (fitted[upper - 1], fitted[upper]);
    let w = if f_hi > f_lo { (target - f_lo) / (f_hi - f_lo) } else { 0.5 };
    let mut h = (h_lo.ln() + w * (h_hi.ln() - h_lo.ln())).exp();
    let mut pilot_runs = n;
    for attempt in 0..=cal.max_bisections {
        let rate = pilot(h, (n + attempt) as u64)?;
        pilot_runs += 1;
        if rate >= 0.5 * target && rate <= 2.0 * target {
            return Ok(Calibration { h, measured_rate: rate, grid, fitted, pilot_runs });
        }
        if rate < target {
            h_lo = h;
        } else {
            h_hi = h;
        }
        h = (h_lo * h_hi).sqrt();
    }
    Err(Error::CalibrationFailed(format!(
        "no pilot within [{}, {}] after {} bisections",
        0.5 * target,
        2.0 * target,
        cal.max_bisections
    )))
}
