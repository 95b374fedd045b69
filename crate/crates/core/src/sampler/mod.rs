//! ABC-R MCMC: random-walk Metropolis–Hastings where the likelihood is
//! replaced by a Gaussian kernel on the rescaled estimating-function summary
//! of a dataset simulated at the proposed parameter.

mod calibrate;
mod chain;
mod summary;
mod transform;

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use calibrate::{calibrate_h, isotonic_increasing, Calibration, CalibrationConfig};
pub use chain::{Chain, ChainMeta, STUCK_RATE};
pub use summary::{summary_stat, SummaryContext};
pub use transform::LogTransform;

pub(crate) use chain::finish_meta;

use crate::baselines::PriorSpec;
use crate::error::{Error, Result};
use crate::estfun::EstimatingFunctionModel;
use crate::numerics::{MvtSampler, RngStream, SpdMatrix, LN_2PI};

/// `log N_d(η; 0, h I_d)`.
pub fn kernel_log(eta: &DVector<f64>, h: f64) -> f64 {
    let d = eta.len() as f64;
    -0.5 * d * (LN_2PI + h.ln()) - eta.norm_squared() / (2.0 * h)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AbcrConfig {
    /// Kernel covariance scale: `K_h = N_d(0, h I_d)`.
    pub h: f64,
    pub n_iter: usize,
    #[serde(default)]
    pub burn_in: usize,
    #[serde(default = "one")]
    pub thin: usize,
    #[serde(default = "default_df")]
    pub proposal_df: u32,
    /// Multiplier of the proposal scale; `2.38² / d` when absent.
    #[serde(default)]
    pub scale_multiplier: Option<f64>,
    /// Proposal scale in parameter coordinates; the sandwich `K(θ̃)` when absent.
    #[serde(skip)]
    pub proposal_scale: Option<SpdMatrix>,
}

fn one() -> usize {
    1
}

fn default_df() -> u32 {
    5
}

impl AbcrConfig {
    pub fn new(h: f64, n_iter: usize) -> Self {
        Self { h, n_iter, burn_in: n_iter / 10, thin: 1, proposal_df: 5, scale_multiplier: None, proposal_scale: None }
    }

    pub fn with_h(&self, h: f64) -> Self {
        Self { h, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(Error::InvalidInput(format!("h must be positive, got {}", self.h)));
        }
        if self.n_iter == 0 || self.burn_in >= self.n_iter || self.thin == 0 || self.proposal_df == 0 {
            return Err(Error::InvalidInput("need n_iter > burn_in >= 0, thin >= 1 and proposal_df >= 1".into()));
        }
        if let Some(m) = self.scale_multiplier {
            if !(m > 0.0) {
                return Err(Error::InvalidInput("scale_multiplier must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Runs the ABC-R chain from `θ̃`.
///
/// Proposals are multivariate-t random-walk steps in log coordinates for
/// positive parameters, so the prior ratio carries the Jacobian. The current
/// state's summary is kept, not re-simulated; the first one comes from a
/// fresh simulation at `θ̃`.
pub fn abcr_mcmc<M: EstimatingFunctionModel>(
    model: &M,
    prior: &PriorSpec,
    ctx: &SummaryContext,
    cfg: &AbcrConfig,
    rng: &mut RngStream,
) -> Result<Chain> {
    cfg.validate()?;
    let d = model.dim();
    prior.check_dim(d)?;
    let tf = LogTransform::new(model.positive_mask());
    let theta0 = ctx.theta_tilde.clone();
    let scale = cfg.proposal_scale.as_ref().unwrap_or(&ctx.k);
    let mult = cfg.scale_multiplier.unwrap_or(2.38 * 2.38 / d as f64);
    let scale_z = tf.covariance_to_z(&theta0, scale.matrix())?.scaled(mult);
    let proposal = MvtSampler::new(DVector::zeros(d), &scale_z, cfg.proposal_df)?;

    let mut z = tf.to_z(&theta0);
    let mut log_prior = prior.log_density(&theta0) + tf.log_jacobian(&z);
    if !log_prior.is_finite() {
        return Err(Error::PriorUnsupported);
    }
    let y0 = model.simulate(&theta0, rng);
    let mut eta = ctx.summary(model, &y0);
    let mut log_kernel = kernel_log(&eta, cfg.h);

    let mut meta = ChainMeta {
        method: "abcr".into(),
        param_names: model.param_names(),
        n_iter: cfg.n_iter,
        burn_in: cfg.burn_in,
        thin: cfg.thin,
        accepted: 0,
        acceptance_rate: 0.0,
        post_burn_in_acceptance: 0.0,
        h: Some(cfg.h),
        seed: rng.seed(),
        stream: rng.stream(),
        stuck: false,
    };
    let mut post_accepted = 0;
    let mut draws = Vec::with_capacity((cfg.n_iter - cfg.burn_in).div_ceil(cfg.thin));
    let mut summary_norms = Vec::with_capacity(cfg.n_iter);
    let mut theta = theta0;

    for i in 0..cfg.n_iter {
        let z_star = &z + proposal.increment(rng);
        let theta_star = tf.to_theta(&z_star);
        let log_prior_star = if model.is_admissible(&theta_star) {
            prior.log_density(&theta_star) + tf.log_jacobian(&z_star)
        } else {
            f64::NEG_INFINITY
        };
        let log_u = rng.random::<f64>().ln();
        if log_prior_star.is_finite() {
            let y_star = model.simulate(&theta_star, rng);
            let eta_star = ctx.summary(model, &y_star);
            let log_kernel_star = kernel_log(&eta_star, cfg.h);
            if log_u < log_kernel_star - log_kernel + log_prior_star - log_prior {
                z = z_star;
                theta = theta_star;
                eta = eta_star;
                log_kernel = log_kernel_star;
                log_prior = log_prior_star;
                meta.accepted += 1;
                if i >= cfg.burn_in {
                    post_accepted += 1;
                }
            }
        }
        summary_norms.push(eta.norm());
        if i >= cfg.burn_in && (i - cfg.burn_in) % cfg.thin == 0 {
            draws.push(theta.clone());
        }
    }
    finish_meta(&mut meta, post_accepted);
    Ok(Chain { draws, summary_norms, meta })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::baselines::PriorComponent;
    use crate::estfun::TuningConstants;
    use crate::godambe::{MEstimate, DEFAULT_FD_STEP};
    use crate::numerics::{mean, norm_pdf, quantile_sorted, sorted_copy};
    use crate::toy::{toy_simulate, ContaminationSpec, ToyModel, ToyTheta};
    use nalgebra::DMatrix;

    /// A model whose summary is identically zero: ABC-R reduces to
    /// random-walk MH on the prior.
    pub(crate) struct ZeroSummary {
        pub positive: Vec<bool>,
    }

    impl EstimatingFunctionModel for ZeroSummary {
        type Data = ();
        fn dim(&self) -> usize {
            self.positive.len()
        }
        fn param_names(&self) -> Vec<String> {
            (0..self.dim()).map(|k| format!("p{k}")).collect()
        }
        fn positive_mask(&self) -> Vec<bool> {
            self.positive.clone()
        }
        fn simulate(&self, _: &DVector<f64>, _: &mut RngStream) {}
        fn psi_units(&self, _: &(), theta: &DVector<f64>) -> Vec<DVector<f64>> {
            vec![DVector::zeros(theta.len())]
        }
        fn data_part(&self, _: &(), theta: &DVector<f64>) -> DVector<f64> {
            DVector::zeros(theta.len())
        }
        fn correction_part(&self, theta: &DVector<f64>) -> DVector<f64> {
            DVector::zeros(theta.len())
        }
        fn solve(&self, _: &()) -> Result<DVector<f64>> {
            Ok(DVector::zeros(self.dim()))
        }
    }

    pub(crate) fn zero_context(theta: DVector<f64>, k: DMatrix<f64>) -> SummaryContext {
        let d = theta.len();
        let k = SpdMatrix::new(k).unwrap();
        // H = I makes K = J
        let est = MEstimate::from_hj(theta, &DMatrix::identity(d, d), k, crate::godambe::MEstimateSource::Analytic)
            .unwrap();
        SummaryContext::new(&ZeroSummary { positive: vec![false; d] }, &(), &est)
    }

    #[test]
    fn kernel_examples() {
        let zero = DVector::zeros(3);
        assert!((kernel_log(&zero, 0.5) - (-1.5 * (2.0 * std::f64::consts::PI * 0.5).ln())).abs() < 1e-14);
        let one = DVector::from_vec(vec![1.0]);
        assert!((kernel_log(&one, 1.0) - norm_pdf(1.0).ln()).abs() < 1e-14);
        let e1 = DVector::from_vec(vec![0.3, -1.0]);
        let e2 = DVector::from_vec(vec![2.0, 0.1]);
        let diff = kernel_log(&e1, 0.7) - kernel_log(&e2, 0.7);
        assert!((diff - (e2.norm_squared() - e1.norm_squared()) / 1.4).abs() < 1e-14);
    }

    #[test]
    fn zero_summary_samples_the_prior() {
        let model = ZeroSummary { positive: vec![false] };
        let prior = PriorSpec::new(vec![PriorComponent::Normal { mean: 1.0, sd: 2.0 }]).unwrap();
        let ctx = zero_context(DVector::from_vec(vec![1.0]), DMatrix::from_element(1, 1, 4.0));
        let mut cfg = AbcrConfig::new(1.0, 200_000);
        cfg.thin = 5;
        let chain = abcr_mcmc(&model, &prior, &ctx, &cfg, &mut RngStream::new(1, 0)).unwrap();
        let s = sorted_copy(&chain.column(0));
        for (p, z) in [(0.1, -1.281_551_565_545), (0.5, 0.0), (0.9, 1.281_551_565_545)] {
            let target = 1.0 + 2.0 * z;
            assert!((quantile_sorted(&s, p) - target).abs() < 0.1, "p={p}: {}", quantile_sorted(&s, p));
        }
    }

    #[test]
    fn zero_summary_log_scale_samples_the_prior() {
        let model = ZeroSummary { positive: vec![true] };
        let prior = PriorSpec::new(vec![PriorComponent::HalfCauchy { scale: 1.0 }]).unwrap();
        let ctx = zero_context(DVector::from_vec(vec![1.0]), DMatrix::from_element(1, 1, 1.0));
        let mut cfg = AbcrConfig::new(1.0, 200_000);
        cfg.scale_multiplier = Some(4.0);
        let chain = abcr_mcmc(&model, &prior, &ctx, &cfg, &mut RngStream::new(2, 0)).unwrap();
        let s = sorted_copy(&chain.column(0));
        // half-Cauchy(1) quartiles: tan(π/8), 1, tan(3π/8)
        for (p, target) in [(0.25, (std::f64::consts::PI / 8.0).tan()), (0.5, 1.0), (0.75, (3.0 * std::f64::consts::PI / 8.0).tan())] {
            assert!((quantile_sorted(&s, p) / target - 1.0).abs() < 0.06, "p={p}");
        }
    }

    #[test]
    fn transitions_are_reversible() {
        let model = ZeroSummary { positive: vec![false] };
        let prior = PriorSpec::new(vec![PriorComponent::Normal { mean: 0.0, sd: 1.0 }]).unwrap();
        let ctx = zero_context(DVector::from_vec(vec![0.0]), DMatrix::from_element(1, 1, 1.0));
        let mut cfg = AbcrConfig::new(1.0, 300_000);
        cfg.burn_in = 0;
        let chain = abcr_mcmc(&model, &prior, &ctx, &cfg, &mut RngStream::new(3, 0)).unwrap();
        let edges = [-1.0, -0.3, 0.3, 1.0];
        let bin = |x: f64| edges.iter().filter(|&&e| x > e).count();
        let nb = edges.len() + 1;
        let mut counts = vec![vec![0.0; nb]; nb];
        for w in chain.draws.windows(2) {
            counts[bin(w[0][0])][bin(w[1][0])] += 1.0;
        }
        let (mut stat, mut df) = (0.0, 0.0);
        for i in 0..nb {
            for j in i + 1..nb {
                let (a, b) = (counts[i][j], counts[j][i]);
                if a + b > 0.0 {
                    stat += (a - b) * (a - b) / (a + b);
                    df += 1.0;
                }
            }
        }
        // dependence between successive pairs inflates the variance mildly
        assert!(stat < df + 6.0 * (2.0 * df as f64).sqrt(), "chi2 {stat} on {df} df");
    }

    fn toy_setup(n: usize, seed: u64) -> (ToyModel, Vec<f64>, MEstimate, SummaryContext) {
        let model = ToyModel::new(n, TuningConstants::default());
        let y = toy_simulate(ToyTheta::new(0.5, 1.5).unwrap(), n, ContaminationSpec::none(), &mut RngStream::new(seed, 0));
        let est = MEstimate::monte_carlo(&model, &y, 300, DEFAULT_FD_STEP, &RngStream::new(seed, 1)).unwrap();
        let ctx = SummaryContext::new(&model, &y, &est);
        (model, y, est, ctx)
    }

    #[test]
    fn summary_routes_agree_and_vanish_on_observed_data() {
        let (model, y, _, ctx) = toy_setup(60, 4);
        assert!(ctx.summary(&model, &y).amax() == 0.0);
        assert!(ctx.observed_offset() < 1e-8);
        let mut rng = RngStream::new(4, 2);
        for _ in 0..20 {
            let th = DVector::from_vec(vec![rng.random_range(-1.0..2.0), rng.random_range(0.5..3.0)]);
            let ys = model.simulate(&th, &mut rng);
            let a = ctx.summary(&model, &ys);
            let b = ctx.summary_direct(&model, &ys);
            assert!((a - b).amax() < 1e-12);
        }
    }

    #[test]
    fn toy_posterior_tracks_sandwich() {
        let (model, _, est, ctx) = toy_setup(200, 5);
        let cfg = AbcrConfig { burn_in: 2000, ..AbcrConfig::new(0.05, 40_000) };
        let chain = abcr_mcmc(&model, &PriorSpec::toy_default(), &ctx, &cfg, &mut RngStream::new(5, 3)).unwrap();
        assert!(chain.acceptance_rate() > 0.005);
        for k in 0..2 {
            let sd = est.k.matrix()[(k, k)].sqrt();
            let m = mean(&chain.column(k));
            assert!((m - est.theta_tilde[k]).abs() < 0.3 * sd, "coordinate {k}");
        }
    }

    #[test]
    fn seeded_chains_are_identical() {
        let (model, _, _, ctx) = toy_setup(30, 6);
        let cfg = AbcrConfig::new(0.5, 2000);
        let a = abcr_mcmc(&model, &PriorSpec::toy_default(), &ctx, &cfg, &mut RngStream::new(6, 7)).unwrap();
        let b = abcr_mcmc(&model, &PriorSpec::toy_default(), &ctx, &cfg, &mut RngStream::new(6, 7)).unwrap();
        assert_eq!(a, b);
        let mut buf_a = Vec::new();
        let mut buf_b = Vec::new();
        a.write_csv(&mut buf_a).unwrap();
        b.write_csv(&mut buf_b).unwrap();
        assert_eq!(buf_a, buf_b);
        assert_eq!(a.summary_norms.len(), 2000);
        assert_eq!(a.meta.acceptance_rate, a.meta.accepted as f64 / 2000.0);
    }

    #[test]
    fn unsupported_start_is_rejected() {
        let model = ZeroSummary { positive: vec![false] };
        let prior = PriorSpec::new(vec![PriorComponent::HalfCauchy { scale: 1.0 }]).unwrap();
        let ctx = zero_context(DVector::from_vec(vec![-1.0]), DMatrix::from_element(1, 1, 1.0));
        let r = abcr_mcmc(&model, &prior, &ctx, &AbcrConfig::new(1.0, 100), &mut RngStream::new(7, 0));
        assert!(matches!(r, Err(Error::PriorUnsupported)));
        let mut bad = AbcrConfig::new(1.0, 100);
        bad.burn_in = 100;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn huge_bandwidth_matches_prior_only_rate() {
        let (model, _, _, ctx) = toy_setup(50, 8);
        let cfg = AbcrConfig::new(1e6, 20_000);
        let abc = abcr_mcmc(&model, &PriorSpec::toy_default(), &ctx, &cfg, &mut RngStream::new(8, 1)).unwrap();
        let zero = ZeroSummary { positive: vec![false, true] };
        let plain = abcr_mcmc(&zero, &PriorSpec::toy_default(), &ctx, &cfg, &mut RngStream::new(8, 2)).unwrap();
        assert!(abc.acceptance_rate() > 0.9);
        assert!((abc.acceptance_rate() - plain.acceptance_rate()).abs() < 0.02);
    }
}
