use serde::{Deserialize, Serialize};

use crate::numerics::{mean, quantile_sorted, sorted_copy, variance};
use crate::sampler::Chain;

/// Empirical summaries of one coordinate of a chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub q975: f64,
    pub ess: f64,
}

pub fn summarize(name: &str, xs: &[f64]) -> ParamSummary {
    assert!(!xs.is_empty(), "cannot summarize an empty sample");
    let s = sorted_copy(xs);
    ParamSummary {
        name: name.to_string(),
        mean: mean(xs),
        sd: if xs.len() > 1 { variance(xs).sqrt() } else { 0.0 },
        q025: quantile_sorted(&s, 0.025),
        q25: quantile_sorted(&s, 0.25),
        median: quantile_sorted(&s, 0.5),
        q75: quantile_sorted(&s, 0.75),
        q975: quantile_sorted(&s, 0.975),
        ess: effective_sample_size(xs),
    }
}

pub fn posterior_summaries(chain: &Chain) -> Vec<ParamSummary> {
    (0..chain.dim()).map(|k| summarize(&chain.meta.param_names[k], &chain.column(k))).collect()
}

/// Effective sample size from Geyer's initial monotone sequence estimator.
///
/// A constant series has ESS 1.
pub fn effective_sample_size(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 4 {
        return n as f64;
    }
    let m = mean(xs);
    let c: Vec<f64> = xs.iter().map(|x| x - m).collect();
    let autocov = |lag: usize| -> f64 { c[..n - lag].iter().zip(&c[lag..]).map(|(a, b)| a * b).sum::<f64>() / n as f64 };
    let g0 = autocov(0);
    if !(g0 > 0.0) {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut prev = f64::INFINITY;
    let mut k = 0;
    while 2 * k + 1 < n {
        let mut pair = (autocov(2 * k) + autocov(2 * k + 1)) / g0;
        if pair <= 0.0 {
            break;
        }
        pair = pair.min(prev);
        prev = pair;
        sum += pair;
        k += 1;
    }
    let tau = (2.0 * sum - 1.0).max(1.0 / n as f64);
    (n as f64 / tau).min(n as f64 * (n as f64).log10())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn constant_chain() {
        let s = summarize("x", &[2.5; 500]);
        for q in [s.q025, s.q25, s.median, s.q75, s.q975, s.mean] {
            assert_eq!(q, 2.5);
        }
        assert_eq!(s.ess, 1.0);
    }

    #[test]
    fn median_of_five() {
        assert_eq!(summarize("x", &[1.0, 2.0, 3.0, 4.0, 5.0]).median, 3.0);
    }

    #[test]
    fn iid_ess_close_to_n() {
        let mut rng = RngStream::new(4, 0);
        let xs: Vec<f64> = (0..20_000).map(|_| rng.sample(StandardNormal)).collect();
        let ess = effective_sample_size(&xs);
        assert!((ess / 20_000.0 - 1.0).abs() < 0.15, "{ess}");
    }

    #[test]
    fn ar1_ess_matches_theory() {
        // ESS/n = (1 - ρ)/(1 + ρ) for a stationary AR(1).
        let rho: f64 = 0.9;
        let mut rng = RngStream::new(5, 0);
        let mut x = 0.0;
        let xs: Vec<f64> = (0..200_000)
            .map(|_| {
                x = rho * x + (1.0 - rho * rho).sqrt() * rng.sample::<f64, _>(StandardNormal);
                x
            })
            .collect();
        let ratio = effective_sample_size(&xs) / xs.len() as f64;
        let exact = (1.0 - rho) / (1.0 + rho);
        assert!((ratio / exact - 1.0).abs() < 0.15, "{ratio} vs {exact}");
    }
}
