use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::PriorSpec;
use crate::error::{Error, Result};
use crate::numerics::{MvnSampler, RngStream, SpdMatrix};
use crate::sampler::{finish_meta, Chain, ChainMeta, LogTransform};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MhConfig {
    pub n_iter: usize,
    /// Adaptation runs only during burn-in.
    pub burn_in: usize,
    #[serde(default = "one")]
    pub thin: usize,
    #[serde(default = "default_target")]
    pub target_rate: f64,
    /// Initial proposal covariance in unconstrained coordinates; a small
    /// diagonal when absent.
    #[serde(skip)]
    pub initial_cov: Option<SpdMatrix>,
}

fn one() -> usize {
    1
}

fn default_target() -> f64 {
    0.234
}

impl MhConfig {
    pub fn new(n_iter: usize, burn_in: usize) -> Self {
        Self { n_iter, burn_in, thin: 1, target_rate: 0.234, initial_cov: None }
    }
}

/// Running mean and covariance (Welford).
struct RunningCov {
    n: f64,
    mean: DVector<f64>,
    m2: DMatrix<f64>,
}

impl RunningCov {
    fn new(d: usize) -> Self {
        Self { n: 0.0, mean: DVector::zeros(d), m2: DMatrix::zeros(d, d) }
    }

    fn push(&mut self, x: &DVector<f64>) {
        self.n += 1.0;
        let delta = x - &self.mean;
        self.mean += &delta / self.n;
        let delta2 = x - &self.mean;
        self.m2 += &delta * delta2.transpose();
    }

    fn cov(&self) -> DMatrix<f64> {
        &self.m2 / (self.n - 1.0)
    }
}

/// Adaptive Gaussian random-walk Metropolis–Hastings on the full posterior.
///
/// Positive coordinates are sampled on the log scale with the Jacobian in the
/// target. During burn-in the proposal is `exp(2s) Σ`: `s` follows a
/// Robbins–Monro recursion towards `target_rate` with gain `t^-0.6`, and `Σ`
/// is refreshed every 100 iterations from the empirical covariance of the
/// burn-in draws. Both are frozen afterwards, so the retained chain is a
/// homogeneous Markov chain.
pub fn full_mh<F>(
    loglik: F,
    prior: &PriorSpec,
    positive: Vec<bool>,
    param_names: Vec<String>,
    init: &DVector<f64>,
    cfg: &MhConfig,
    rng: &mut RngStream,
) -> Result<Chain>
where
    F: Fn(&DVector<f64>) -> f64,
{
    let d = init.len();
    prior.check_dim(d)?;
    if positive.len() != d || param_names.len() != d {
        return Err(Error::InvalidInput("mask, names and init must have the same length".into()));
    }
    if cfg.n_iter == 0 || cfg.burn_in >= cfg.n_iter || cfg.thin == 0 || !(cfg.target_rate > 0.0 && cfg.target_rate < 1.0) {
        return Err(Error::InvalidInput("need n_iter > burn_in, thin >= 1, target rate in (0, 1)".into()));
    }
    let tf = LogTransform::new(positive);
    let target = |z: &DVector<f64>| -> f64 {
        let theta = tf.to_theta(z);
        if theta.iter().any(|v| !v.is_finite()) {
            return f64::NEG_INFINITY;
        }
        let lp = prior.log_density(&theta);
        if lp == f64::NEG_INFINITY {
            return lp;
        }
        let v = lp + loglik(&theta) + tf.log_jacobian(z);
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    };

    let mut z = tf.to_z(init);
    let mut log_target = target(&z);
    if !log_target.is_finite() {
        return Err(Error::PriorUnsupported);
    }
    let mut base = match &cfg.initial_cov {
        Some(c) => c.clone(),
        None => SpdMatrix::from_diagonal(&z.iter().map(|v| (0.1 * v.abs().max(1.0)).powi(2)).collect::<Vec<_>>())?,
    };
    let mut log_scale = (2.38 / (d as f64).sqrt()).ln();
    let mut proposal = MvnSampler::new(DVector::zeros(d), &base.scaled((2.0 * log_scale).exp()))?;
    let mut running = RunningCov::new(d);

    let mut meta = ChainMeta {
        method: "full_mh".into(),
        param_names,
        n_iter: cfg.n_iter,
        burn_in: cfg.burn_in,
        thin: cfg.thin,
        accepted: 0,
        acceptance_rate: 0.0,
        post_burn_in_acceptance: 0.0,
        h: None,
        seed: rng.seed(),
        stream: rng.stream(),
        stuck: false,
    };
    let mut post_accepted = 0;
    let mut draws = Vec::with_capacity((cfg.n_iter - cfg.burn_in).div_ceil(cfg.thin));

    for i in 0..cfg.n_iter {
        let z_star = &z + proposal.sample(rng);
        let lt_star = target(&z_star);
        let log_alpha = (lt_star - log_target).min(0.0);
        let accept = rng.random::<f64>().ln() < log_alpha;
        if accept {
            z = z_star;
            log_target = lt_star;
            meta.accepted += 1;
            if i >= cfg.burn_in {
                post_accepted += 1;
            }
        }
        if i < cfg.burn_in {
            let t = (i + 1) as f64;
            let alpha = if log_alpha.is_finite() { log_alpha.exp() } else { 0.0 };
            log_scale += t.powf(-0.6) * (alpha - cfg.target_rate);
            running.push(&z);
            let refresh = (i + 1) % 100 == 0 && running.n >= (10 * d).max(200) as f64;
            if refresh {
                let emp = running.cov();
                let ridge = 1e-8 * emp.trace().max(1e-12) / d as f64;
                if let Ok(c) = SpdMatrix::from_symmetrized(emp + DMatrix::identity(d, d) * ridge) {
                    base = c;
                }
            }
            proposal = MvnSampler::new(DVector::zeros(d), &base.scaled((2.0 * log_scale).exp()))?;
        } else if (i - cfg.burn_in) % cfg.thin == 0 {
            draws.push(tf.to_theta(&z));
        }
    }
    finish_meta(&mut meta, post_accepted);
    Ok(Chain { draws, summary_norms: Vec::new(), meta })
}
