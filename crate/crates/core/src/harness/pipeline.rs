use serde::{Deserialize, Serialize};

use crate::baselines::PriorSpec;
use crate::error::Result;
use crate::estfun::EstimatingFunctionModel;
use crate::godambe::{MEstimate, DEFAULT_FD_STEP, DEFAULT_NSIM};
use crate::numerics::RngStream;
use crate::sampler::{abcr_mcmc, calibrate_h, AbcrConfig, Calibration, CalibrationConfig, Chain, SummaryContext};

/// Settings for the solve, sandwich, calibrate, sample sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AbcrSettings {
    pub nsim: usize,
    pub fd_step: f64,
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub proposal_df: u32,
    /// Pilot chain length; the first third is burn-in.
    pub pilot_iter: usize,
    /// Fixed kernel scale; calibrated when absent.
    pub h: Option<f64>,
    pub calibration: CalibrationConfig,
}

impl Default for AbcrSettings {
    fn default() -> Self {
        Self {
            nsim: DEFAULT_NSIM,
            fd_step: DEFAULT_FD_STEP,
            n_iter: 50_000,
            burn_in: 5_000,
            thin: 1,
            proposal_df: 5,
            pilot_iter: 6_000,
            h: None,
            calibration: CalibrationConfig::default(),
        }
    }
}

impl AbcrSettings {
    pub fn chain_config(&self, h: f64) -> AbcrConfig {
        AbcrConfig { burn_in: self.burn_in, thin: self.thin, proposal_df: self.proposal_df, ..AbcrConfig::new(h, self.n_iter) }
    }

    pub fn pilot_config(&self) -> AbcrConfig {
        AbcrConfig { burn_in: self.pilot_iter / 3, thin: 1, proposal_df: self.proposal_df, ..AbcrConfig::new(1.0, self.pilot_iter) }
    }
}

#[derive(Debug, Clone)]
pub struct AbcrFit {
    pub estimate: MEstimate,
    pub context: SummaryContext,
    pub calibration: Option<Calibration>,
    pub chain: Chain,
}

/// Sandwich ingredients at the M-estimate, the summary context, and `h`.
pub fn prepare_abcr<M: EstimatingFunctionModel>(
    model: &M,
    y: &M::Data,
    prior: &PriorSpec,
    settings: &AbcrSettings,
    rng: &RngStream,
) -> Result<(MEstimate, SummaryContext, Option<Calibration>, f64)> {
    let estimate = MEstimate::monte_carlo(model, y, settings.nsim, settings.fd_step, &rng.named("godambe"))?;
    let context = SummaryContext::new(model, y, &estimate);
    let (calibration, h) = match settings.h {
        Some(h) => (None, h),
        None => {
            let cal = calibrate_h(model, prior, &context, &settings.pilot_config(), &settings.calibration, &rng.named("calibrate"))?;
            let h = cal.h;
            (Some(cal), h)
        }
    };
    Ok((estimate, context, calibration, h))
}

/// Full ABC-R fit. Stages draw from named child streams of `rng`, so each
/// is reproducible on its own.
pub fn fit_abcr<M: EstimatingFunctionModel>(
    model: &M,
    y: &M::Data,
    prior: &PriorSpec,
    settings: &AbcrSettings,
    rng: &RngStream,
) -> Result<AbcrFit> {
    let (estimate, context, calibration, h) = prepare_abcr(model, y, prior, settings, rng)?;
    let chain = abcr_mcmc(model, prior, &context, &settings.chain_config(h), &mut rng.named("chain"))?;
    Ok(AbcrFit { estimate, context, calibration, chain })
}
