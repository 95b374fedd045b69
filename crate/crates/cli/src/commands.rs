use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use abcr::baselines::{full_mh, PriorSpec};
use abcr::godambe::MEstimateRecord;
use abcr::harness::{
    fbst_evidence, fit_abcr, posterior_summaries, prepare_abcr, sensitivity_study, simulation_study, EvidenceResult,
    ParamSummary,
};
use abcr::lmm::{
    assemble, generate_synthetic, lmm_loglik, lmm_solve_with, read_long_path, write_long, LmmDesign, LmmModel, LmmResponse,
    LmmTheta, SolverOptions, ValueTransform,
};
use abcr::numerics::{mean, variance, RngStream};
use abcr::sampler::{Calibration, Chain};
use abcr::toy::{toy_loglik, toy_simulate, ToyModel, ToyTheta};
use abcr::{EstimatingFunctionModel, TuningConstants};
use nalgebra::DVector;
use serde::Serialize;

use crate::config::{ModelKind, RunConfig};
use crate::{CliError, Common, ModelArgs};

type Result<T> = std::result::Result<T, CliError>;

fn setup(common: &Common, command: &str) -> Result<(RunConfig, PathBuf)> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    cfg.command = command.to_string();
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.output_dir = Some(o.clone());
    }
    let dir = match &cfg.output_dir {
        Some(d) => d.clone(),
        None => std::env::var_os("ABCR_OUTPUT_DIR").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("abcr-out")).join(command),
    };
    if let Some(n) = common.threads {
        set_threads(n)?;
    }
    fs::create_dir_all(&dir)?;
    Ok((cfg, dir))
}

#[cfg(feature = "parallel")]
fn set_threads(n: usize) -> Result<()> {
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| CliError::config(e.to_string()))
}

#[cfg(not(feature = "parallel"))]
fn set_threads(_: usize) -> Result<()> {
    log::warn!("built without the parallel feature; --threads is ignored");
    Ok(())
}

fn apply_model_args(cfg: &mut RunConfig, args: &ModelArgs) -> Result<()> {
    if let Some(k) = args.model {
        cfg.model.kind = k;
    }
    if let Some(r) = &args.response {
        cfg.model.response = Some(r.clone());
    }
    if args.interaction {
        cfg.model.interaction = true;
    }
    if let Some(t) = &args.transform {
        cfg.model.transform = serde_json::from_value::<ValueTransform>(serde_json::Value::String(t.clone()))
            .map_err(|_| CliError::config(format!("unknown transform {t:?}; expected identity, log or log1p")))?;
    }
    Ok(())
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(create(dir, name)?, value).map_err(|e| CliError::config(e.to_string()))
}

fn write_echo(cfg: &RunConfig, dir: &Path) -> Result<()> {
    fs::write(dir.join("config.toml"), cfg.to_toml())?;
    Ok(())
}

fn read_toy(path: &Path) -> Result<Vec<f64>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    let headers = rdr.headers().map_err(|e| CliError::config(e.to_string()))?.clone();
    let col = match headers.iter().position(|h| h.trim() == "y") {
        Some(c) => c,
        None if headers.len() == 1 => 0,
        None => return Err(CliError::config("toy data needs a `y` column")),
    };
    let mut y = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::config(e.to_string()))?;
        let v = rec.get(col).unwrap_or("").trim();
        y.push(v.parse::<f64>().map_err(|_| CliError::config(format!("cannot parse {v:?} as a number")))?);
    }
    Ok(y)
}

enum Loaded {
    Toy(Vec<f64>),
    Lmm(Arc<LmmDesign>, LmmResponse),
}

fn load_data(cfg: &RunConfig, path: &Path) -> Result<Loaded> {
    match cfg.model.kind {
        ModelKind::Toy => Ok(Loaded::Toy(read_toy(path)?)),
        ModelKind::Lmm => {
            let response = cfg.model.response.as_deref().ok_or_else(|| CliError::config("the LMM needs a response (--response)"))?;
            let rows = read_long_path(path)?;
            let data = assemble(&rows, response, cfg.model.interaction, cfg.model.transform)?;
            Ok(Loaded::Lmm(Arc::new(data.design), data.y))
        }
    }
}

#[derive(Serialize)]
struct MethodOutput {
    method: String,
    acceptance_rate: f64,
    posterior: Vec<ParamSummary>,
    fbst: Vec<EvidenceResult>,
}

#[derive(Serialize)]
struct FitSummary {
    param_names: Vec<String>,
    theta_tilde: Vec<f64>,
    h: f64,
    calibrated: bool,
    abcr: MethodOutput,
    #[serde(skip_serializing_if = "Option::is_none")]
    mcmc: Option<MethodOutput>,
}

/// FBST of `θ_k = 0` for the coordinates in `tested`.
fn method_output(chain: &Chain, tested: usize) -> Result<MethodOutput> {
    let fbst = (0..tested)
        .map(|k| Ok(fbst_evidence(&chain.column(k), 0.0)?.named(chain.meta.param_names[k].clone())))
        .collect::<Result<Vec<_>>>()?;
    Ok(MethodOutput {
        method: chain.meta.method.clone(),
        acceptance_rate: chain.acceptance_rate(),
        posterior: posterior_summaries(chain),
        fbst,
    })
}

fn write_chain(dir: &Path, prefix: &str, chain: &Chain) -> Result<()> {
    chain.write_csv(create(dir, &format!("{prefix}chain.csv"))?)?;
    chain.write_meta_json(create(dir, &format!("{prefix}chain_meta.json"))?)?;
    Ok(())
}

struct FitParts {
    record: MEstimateRecord,
    calibration: Option<Calibration>,
    chain: Chain,
    mcmc: Option<Chain>,
    /// Coordinates given an FBST: the location or the fixed effects.
    tested: usize,
}

fn run_fit<M: EstimatingFunctionModel>(
    model: &M,
    y: &M::Data,
    cfg: &RunConfig,
    prior: &PriorSpec,
    mcmc: Option<(&dyn Fn(&DVector<f64>) -> f64, DVector<f64>)>,
    tested: usize,
) -> Result<FitParts> {
    let rng = RngStream::new(cfg.seed, 0);
    let fit = fit_abcr(model, y, prior, &cfg.abcr, &rng)?;
    let mcmc = match mcmc {
        Some((loglik, init)) => Some(full_mh(
            loglik,
            prior,
            model.positive_mask(),
            model.param_names(),
            &init,
            &cfg.mcmc,
            &mut rng.named("mcmc"),
        )?),
        None => None,
    };
    Ok(FitParts {
        record: fit.estimate.to_record(&model.param_names()),
        calibration: fit.calibration,
        chain: fit.chain,
        mcmc,
        tested,
    })
}

pub fn fit(common: &Common, args: &ModelArgs, data: &Path, h: Option<f64>, n_iter: Option<usize>, baseline: bool) -> Result<PathBuf> {
    let (mut cfg, dir) = setup(common, "fit")?;
    apply_model_args(&mut cfg, args)?;
    if let Some(h) = h {
        cfg.abcr.h = Some(h);
    }
    if let Some(n) = n_iter {
        cfg.abcr.burn_in = n / 10;
        cfg.abcr.n_iter = n;
    }
    cfg.baseline_mcmc |= baseline;
    write_echo(&cfg, &dir)?;
    let tc = cfg.tuning;
    let parts = match load_data(&cfg, data)? {
        Loaded::Toy(y) => {
            let model = ToyModel::new(y.len(), tc);
            let prior = cfg.prior_for(2, 0)?;
            let init = DVector::from_vec(vec![mean(&y), variance(&y).sqrt()]);
            let loglik = |th: &DVector<f64>| toy_loglik(&y, ToyTheta::from_vector(th));
            let mcmc = cfg.baseline_mcmc.then_some((&loglik as &dyn Fn(&DVector<f64>) -> f64, init));
            run_fit(&model, &y, &cfg, &prior, mcmc, 1)?
        }
        Loaded::Lmm(design, y) => {
            let q = design.q();
            let model = LmmModel::new(design.clone(), tc).with_correction(cfg.model.correction);
            let prior = cfg.prior_for(model.dim(), q)?;
            let loglik = |th: &DVector<f64>| lmm_loglik(&y, &design, &LmmTheta::from_vector(th)).unwrap_or(f64::NEG_INFINITY);
            let mcmc = if cfg.baseline_mcmc {
                let init = lmm_solve_with(&y, &design, TuningConstants::classical(), &SolverOptions::default())?.theta.to_vector();
                Some((&loglik as &dyn Fn(&DVector<f64>) -> f64, init))
            } else {
                None
            };
            run_fit(&model, &y, &cfg, &prior, mcmc, q)?
        }
    };
    write_json(&dir, "mestimate.json", &parts.record)?;
    if let Some(c) = &parts.calibration {
        write_json(&dir, "calibration.json", c)?;
    }
    write_chain(&dir, "", &parts.chain)?;
    if let Some(m) = &parts.mcmc {
        write_chain(&dir, "mcmc_", m)?;
    }
    let summary = FitSummary {
        param_names: parts.record.param_names.clone(),
        theta_tilde: parts.record.theta_tilde.clone(),
        h: parts.chain.meta.h.unwrap_or(f64::NAN),
        calibrated: parts.calibration.is_some(),
        abcr: method_output(&parts.chain, parts.tested)?,
        mcmc: parts.mcmc.as_ref().map(|m| method_output(m, parts.tested)).transpose()?,
    };
    write_json(&dir, "summary.json", &summary)?;
    Ok(dir)
}

pub fn calibrate(common: &Common, args: &ModelArgs, data: &Path) -> Result<PathBuf> {
    let (mut cfg, dir) = setup(common, "calibrate")?;
    apply_model_args(&mut cfg, args)?;
    cfg.abcr.h = None;
    write_echo(&cfg, &dir)?;
    let rng = RngStream::new(cfg.seed, 0);
    let (record, cal) = match load_data(&cfg, data)? {
        Loaded::Toy(y) => {
            let model = ToyModel::new(y.len(), cfg.tuning);
            let (est, _, cal, _) = prepare_abcr(&model, &y, &cfg.prior_for(2, 0)?, &cfg.abcr, &rng)?;
            (est.to_record(&model.param_names()), cal)
        }
        Loaded::Lmm(design, y) => {
            let q = design.q();
            let model = LmmModel::new(design, cfg.tuning).with_correction(cfg.model.correction);
            let (est, _, cal, _) = prepare_abcr(&model, &y, &cfg.prior_for(model.dim(), q)?, &cfg.abcr, &rng)?;
            (est.to_record(&model.param_names()), cal)
        }
    };
    write_json(&dir, "mestimate.json", &record)?;
    write_json(&dir, "calibration.json", &cal.expect("calibration requested"))?;
    Ok(dir)
}

pub fn simulate(common: &Common, model: Option<ModelKind>, n: Option<usize>, epsilon: Option<f64>, inflation: Option<f64>) -> Result<PathBuf> {
    let (mut cfg, dir) = setup(common, "simulate")?;
    if let Some(k) = model {
        cfg.model.kind = k;
    }
    if let Some(n) = n {
        cfg.simulate.n = n;
    }
    if let Some(e) = epsilon {
        cfg.contamination.epsilon = e;
    }
    if let Some(i) = inflation {
        cfg.contamination.inflation = i;
    }
    let cont = abcr::toy::ContaminationSpec::new(cfg.contamination.epsilon, cfg.contamination.inflation)?;
    write_echo(&cfg, &dir)?;
    let s = &cfg.simulate;
    let mut rng = RngStream::new(cfg.seed, 0).named("simulate");
    match cfg.model.kind {
        ModelKind::Toy => {
            let y = toy_simulate(ToyTheta::new(s.mu, s.sigma)?, s.n, cont, &mut rng);
            let mut w = csv::Writer::from_writer(create(&dir, "data.csv")?);
            let io = |e: csv::Error| CliError::from(abcr::Error::from(e));
            w.write_record(["y"]).map_err(io)?;
            for v in y {
                w.write_record([v.to_string()]).map_err(io)?;
            }
            w.flush()?;
        }
        ModelKind::Lmm => {
            if s.alpha.len() != s.q {
                return Err(CliError::config(format!("simulate.alpha needs {} entries", s.q)));
            }
            let design = LmmDesign::one_way(s.n, s.q)?;
            let theta = LmmTheta::new(s.alpha.clone(), s.sigma1_sq, s.sigma2_sq)?;
            let y = abcr::lmm::lmm_simulate(&theta, &design, cont, &mut rng);
            let rows: Vec<abcr::lmm::LongRow> = design
                .unit_ids()
                .iter()
                .zip(&y)
                .flat_map(|(id, v)| {
                    v.iter().enumerate().map(move |(l, &value)| abcr::lmm::LongRow {
                        unit_id: id.clone(),
                        response: "y".into(),
                        treatment_code: l.to_string(),
                        gender_code: 0,
                        value: Some(value),
                    })
                })
                .collect();
            write_long(&rows, create(&dir, "data.csv")?)?;
        }
    }
    Ok(dir)
}

pub fn sensitivity(common: &Common, n_iter: Option<usize>) -> Result<PathBuf> {
    let (mut cfg, dir) = setup(common, "sensitivity")?;
    if let Some(n) = n_iter {
        cfg.sensitivity.abcr.burn_in = n / 10;
        cfg.sensitivity.abcr.n_iter = n;
    }
    write_echo(&cfg, &dir)?;
    let table = sensitivity_study(&cfg.sensitivity, &RngStream::new(cfg.seed, 0))?;
    table.write_csv(create(&dir, "sensitivity.csv")?)?;
    let mut w = csv::Writer::from_writer(create(&dir, "base_sample.csv")?);
    let io = |e: csv::Error| CliError::from(abcr::Error::from(e));
    w.write_record(["y"]).map_err(io)?;
    for v in &table.base_sample {
        w.write_record([v.to_string()]).map_err(io)?;
    }
    w.flush()?;
    write_json(&dir, "sensitivity_meta.json", &serde_json::json!({ "h": table.h, "rows": table.rows.len() }))?;
    Ok(dir)
}

pub fn simstudy(
    common: &Common,
    q: Option<usize>,
    g: Option<usize>,
    reps: Option<usize>,
    epsilon: Option<f64>,
    inflation: Option<f64>,
) -> Result<PathBuf> {
    let (mut cfg, dir) = setup(common, "simstudy")?;
    let s = &mut cfg.simstudy;
    if let Some(v) = q {
        s.q = v;
    }
    if let Some(v) = g {
        s.g = v;
    }
    if let Some(v) = reps {
        s.n_reps = v;
    }
    if let Some(v) = epsilon {
        s.epsilon = v;
    }
    if let Some(v) = inflation {
        s.inflation = v;
    }
    write_echo(&cfg, &dir)?;
    let result = simulation_study(&cfg.simstudy, &RngStream::new(cfg.seed, 0))?;
    result.write_csv(create(&dir, "simstudy.csv")?)?;
    result.write_timings_csv(create(&dir, "simstudy_timings.csv")?)?;
    write_json(&dir, "simstudy_summary.json", &result.summary)?;
    Ok(dir)
}

pub fn gen_synthetic(common: &Common, heavy_tail_fraction: Option<f64>) -> Result<PathBuf> {
    let (mut cfg, dir) = setup(common, "gen-synthetic")?;
    if let Some(f) = heavy_tail_fraction {
        cfg.synthetic.heavy_tail_fraction = f;
    }
    write_echo(&cfg, &dir)?;
    let rows = generate_synthetic(&cfg.synthetic, &mut RngStream::new(cfg.seed, 0).named("synthetic"))?;
    write_long(&rows, create(&dir, "synthetic_long.csv")?)?;
    Ok(dir)
}
