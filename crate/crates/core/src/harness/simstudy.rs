use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{config_hash, fit_abcr, AbcrSettings};
use crate::baselines::{full_mh, MhConfig, PriorSpec};
use crate::error::{Error, Result};
use crate::estfun::{EstimatingFunctionModel, TuningConstants};
use crate::lmm::{lmm_loglik, lmm_solve, LmmDesign, LmmModel, LmmTheta};
use crate::numerics::{median, RngStream};
use crate::par;
use crate::toy::ContaminationSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Central,
    Contaminated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyMethod {
    Abcr,
    Mcmc,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Central => "central",
            Self::Contaminated => "contaminated",
        }
    }
}

impl StudyMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Abcr => "abcr",
            Self::Mcmc => "mcmc",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimStudyConfig {
    /// Levels per group (fixed effects).
    pub q: usize,
    /// Number of groups.
    pub g: usize,
    pub n_reps: usize,
    pub epsilon: f64,
    pub inflation: f64,
    pub variance_range: (f64, f64),
    pub alpha_range: (f64, f64),
    pub tuning: TuningConstants,
    pub abcr: AbcrSettings,
    pub mcmc: MhConfig,
}

impl Default for SimStudyConfig {
    fn default() -> Self {
        Self {
            q: 3,
            g: 30,
            n_reps: 50,
            epsilon: 0.1,
            inflation: 15.0,
            variance_range: (1.0, 10.0),
            alpha_range: (-5.0, 5.0),
            tuning: TuningConstants::default(),
            abcr: AbcrSettings { nsim: 200, ..AbcrSettings::default() },
            mcmc: MhConfig::new(50_000, 10_000),
        }
    }
}

/// One fitted dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SimStudyRecord {
    pub replication: usize,
    pub regime: Regime,
    pub method: StudyMethod,
    pub theta0: Vec<f64>,
    /// Componentwise posterior medians.
    pub theta_median: Vec<f64>,
    /// `log |median − θ₀|` per component.
    pub log_abs_bias: Vec<f64>,
    /// `‖median − θ₀‖₂`.
    pub euclidean_bias: f64,
    pub seed: u64,
    pub config_hash: String,
    pub runtime_secs: f64,
}

impl SimStudyRecord {
    fn new(replication: usize, regime: Regime, method: StudyMethod, theta0: Vec<f64>, theta_median: Vec<f64>) -> Self {
        let diff: Vec<f64> = theta_median.iter().zip(&theta0).map(|(m, t)| m - t).collect();
        Self {
            replication,
            regime,
            method,
            log_abs_bias: diff.iter().map(|d| d.abs().ln()).collect(),
            euclidean_bias: diff.iter().map(|d| d * d).sum::<f64>().sqrt(),
            theta0,
            theta_median,
            seed: 0,
            config_hash: String::new(),
            runtime_secs: 0.0,
        }
    }

    pub fn signed_bias(&self) -> Vec<f64> {
        self.theta_median.iter().zip(&self.theta0).map(|(m, t)| m - t).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimStudyFailure {
    pub replication: usize,
    pub regime: Regime,
    pub method: StudyMethod,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub regime: Regime,
    pub method: StudyMethod,
    pub n_ok: usize,
    pub n_failed: usize,
    pub median_euclidean_bias: f64,
    pub median_log_abs_bias: Vec<f64>,
    /// Median signed bias per component.
    pub md_signed: Vec<f64>,
    /// Median absolute bias per component.
    pub md_abs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyIndex {
    pub regime: Regime,
    /// `MD_MCMC / MD_ABC` per component from signed medians.
    pub signed: Vec<f64>,
    /// The same ratio from median absolute biases.
    pub absolute: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimStudySummary {
    pub param_names: Vec<String>,
    pub methods: Vec<MethodSummary>,
    pub efficiency: Vec<EfficiencyIndex>,
    pub failures: Vec<SimStudyFailure>,
    pub config_hash: String,
}

impl SimStudySummary {
    pub fn method(&self, regime: Regime, method: StudyMethod) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.regime == regime && m.method == method)
    }

    pub fn efficiency(&self, regime: Regime) -> Option<&EfficiencyIndex> {
        self.efficiency.iter().find(|e| e.regime == regime)
    }
}

#[derive(Debug, Clone)]
pub struct SimStudyResult {
    pub param_names: Vec<String>,
    pub records: Vec<SimStudyRecord>,
    pub failures: Vec<SimStudyFailure>,
    pub summary: SimStudySummary,
}

impl SimStudyResult {
    /// One row per replication × regime × method; runtimes are left out so
    /// reruns are byte-identical.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = ["replication", "regime", "method"].map(String::from).to_vec();
        for prefix in ["theta0", "median", "log_abs_bias"] {
            header.extend(self.param_names.iter().map(|n| format!("{prefix}_{n}")));
        }
        header.extend(["euclidean_bias", "seed", "config_hash"].map(String::from));
        w.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![r.replication.to_string(), r.regime.as_str().into(), r.method.as_str().into()];
            for v in [&r.theta0, &r.theta_median, &r.log_abs_bias] {
                row.extend(v.iter().map(|x| x.to_string()));
            }
            row.extend([r.euclidean_bias.to_string(), r.seed.to_string(), r.config_hash.clone()]);
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_timings_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["replication", "regime", "method", "runtime_secs"])?;
        for r in &self.records {
            w.write_record([r.replication.to_string(), r.regime.as_str().into(), r.method.as_str().into(), r.runtime_secs.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `θ₀` with `α ~ U(alpha_range)^q` and both variances `~ U(variance_range)`.
pub fn draw_theta0(cfg: &SimStudyConfig, rng: &mut RngStream) -> DVector<f64> {
    let (a0, a1) = cfg.alpha_range;
    let (v0, v1) = cfg.variance_range;
    let alpha: Vec<f64> = (0..cfg.q).map(|_| rng.random_range(a0..a1)).collect();
    let s1 = rng.random_range(v0..v1);
    let s2 = rng.random_range(v0..v1);
    LmmTheta { alpha, sigma1_sq: s1, sigma2_sq: s2 }.to_vector()
}

fn fit_mcmc(model: &LmmModel, y: &crate::lmm::LmmResponse, cfg: &SimStudyConfig, rng: &RngStream) -> Result<Vec<f64>> {
    let design = &model.design;
    let init = lmm_solve(y, design, TuningConstants::classical())?.theta.to_vector();
    let loglik = |th: &DVector<f64>| lmm_loglik(y, design, &LmmTheta::from_vector(th)).unwrap_or(f64::NEG_INFINITY);
    let chain = full_mh(
        loglik,
        &PriorSpec::lmm_default(cfg.q),
        model.positive_mask(),
        model.param_names(),
        &init,
        &cfg.mcmc,
        &mut rng.named("mcmc"),
    )?;
    Ok((0..chain.dim()).map(|k| median(&chain.column(k))).collect())
}

fn summarize_methods(records: &[SimStudyRecord], failures: &[SimStudyFailure], d: usize) -> Vec<MethodSummary> {
    let mut out = Vec::new();
    for regime in [Regime::Central, Regime::Contaminated] {
        for method in [StudyMethod::Abcr, StudyMethod::Mcmc] {
            let rs: Vec<&SimStudyRecord> = records.iter().filter(|r| r.regime == regime && r.method == method).collect();
            let n_failed = failures.iter().filter(|f| f.regime == regime && f.method == method).count();
            let col_median = |f: &dyn Fn(&SimStudyRecord) -> f64| -> f64 {
                if rs.is_empty() {
                    f64::NAN
                } else {
                    median(&rs.iter().map(|r| f(r)).collect::<Vec<_>>())
                }
            };
            out.push(MethodSummary {
                regime,
                method,
                n_ok: rs.len(),
                n_failed,
                median_euclidean_bias: col_median(&|r| r.euclidean_bias),
                median_log_abs_bias: (0..d).map(|k| col_median(&|r| r.log_abs_bias[k])).collect(),
                md_signed: (0..d).map(|k| col_median(&|r| r.theta_median[k] - r.theta0[k])).collect(),
                md_abs: (0..d).map(|k| col_median(&|r| (r.theta_median[k] - r.theta0[k]).abs())).collect(),
            });
        }
    }
    out
}

/// Summaries depend on the records only through per-method medians, so they
/// do not change when replications are reordered.
pub fn summarize_study(
    param_names: Vec<String>,
    records: &[SimStudyRecord],
    failures: &[SimStudyFailure],
    config_hash: String,
) -> SimStudySummary {
    let d = param_names.len();
    let methods = summarize_methods(records, failures, d);
    let efficiency = [Regime::Central, Regime::Contaminated]
        .into_iter()
        .map(|regime| {
            let get = |m| methods.iter().find(|s| s.regime == regime && s.method == m).expect("all cells present");
            let (abc, mc) = (get(StudyMethod::Abcr), get(StudyMethod::Mcmc));
            EfficiencyIndex {
                regime,
                signed: (0..d).map(|k| mc.md_signed[k] / abc.md_signed[k]).collect(),
                absolute: (0..d).map(|k| mc.md_abs[k] / abc.md_abs[k]).collect(),
            }
        })
        .collect();
    SimStudySummary { param_names, methods, efficiency, failures: failures.to_vec(), config_hash }
}

/// Monte Carlo comparison of ABC-R and full-likelihood MCMC on the one-way
/// mixed model, under the central model and under group-level scale
/// contamination.
///
/// Replication `r` draws everything from `rng.derive(r)`, so results do not
/// depend on scheduling. Failed fits are logged and excluded, and counted in
/// the summary.
pub fn simulation_study(cfg: &SimStudyConfig, rng: &RngStream) -> Result<SimStudyResult> {
    if cfg.n_reps < 2 {
        return Err(Error::InvalidInput("simulation study needs at least 2 replications".into()));
    }
    let cont = ContaminationSpec::new(cfg.epsilon, cfg.inflation)?;
    let design = Arc::new(LmmDesign::one_way(cfg.g, cfg.q)?);
    let model = LmmModel::new(design, cfg.tuning);
    let prior = PriorSpec::lmm_default(cfg.q);
    let hash = config_hash(cfg)?;
    let param_names = model.param_names();

    type Outcome = (Regime, StudyMethod, std::result::Result<(Vec<f64>, f64), String>);
    let per_rep = par::map_indexed(cfg.n_reps, |r| -> (Vec<f64>, Vec<Outcome>) {
        let rep_rng = rng.derive(r as u64);
        let theta0 = draw_theta0(cfg, &mut rep_rng.named("theta0"));
        let mut out = Vec::with_capacity(4);
        for regime in [Regime::Central, Regime::Contaminated] {
            let c = if regime == Regime::Central { ContaminationSpec::none() } else { cont };
            let stage = rep_rng.named(regime.as_str());
            let y = model.simulate_contaminated(&theta0, c, &mut stage.named("data"));
            let t = Instant::now();
            let abcr = fit_abcr(&model, &y, &prior, &cfg.abcr, &stage.named("abcr"))
                .map(|fit| (0..fit.chain.dim()).map(|k| median(&fit.chain.column(k))).collect::<Vec<_>>());
            out.push((regime, StudyMethod::Abcr, abcr.map(|m| (m, t.elapsed().as_secs_f64())).map_err(|e| e.to_string())));
            let t = Instant::now();
            let mcmc = fit_mcmc(&model, &y, cfg, &stage);
            out.push((regime, StudyMethod::Mcmc, mcmc.map(|m| (m, t.elapsed().as_secs_f64())).map_err(|e| e.to_string())));
        }
        (theta0.iter().copied().collect(), out)
    });

    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (r, (theta0, outcomes)) in per_rep.into_iter().enumerate() {
        for (regime, method, res) in outcomes {
            match res {
                Ok((med, secs)) => {
                    let mut rec = SimStudyRecord::new(r, regime, method, theta0.clone(), med);
                    rec.seed = rng.seed();
                    rec.config_hash = hash.clone();
                    rec.runtime_secs = secs;
                    records.push(rec);
                }
                Err(error) => {
                    log::warn!("replication {r} ({}, {}) failed: {error}", regime.as_str(), method.as_str());
                    failures.push(SimStudyFailure { replication: r, regime, method, error });
                }
            }
        }
    }
    let summary = summarize_study(param_names.clone(), &records, &failures, hash);
    Ok(SimStudyResult { param_names, records, failures, summary })
}
