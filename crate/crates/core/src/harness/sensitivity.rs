use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{config_hash, fit_abcr, prepare_abcr, AbcrSettings};
use crate::baselines::{grid_posterior_auto, GridKind, PriorSpec, DEFAULT_GRID_POINTS};
use crate::error::{Error, Result};
use crate::estfun::TuningConstants;
use crate::numerics::{quantile_sorted, sorted_copy, RngStream};
use crate::par;
use crate::toy::{toy_simulate, ContaminationSpec, ToyModel, ToyTheta};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensitivityMethod {
    Abcr,
    Genuine,
    EmpiricalLikelihood,
}

impl SensitivityMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Abcr => "abcr",
            Self::Genuine => "genuine",
            Self::EmpiricalLikelihood => "empirical_likelihood",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensitivityConfig {
    /// Size of the base sample; must be odd.
    pub n: usize,
    pub mu0: f64,
    pub sigma0: f64,
    pub c_grid: Vec<i32>,
    pub methods: Vec<SensitivityMethod>,
    pub tuning: TuningConstants,
    pub prior: PriorSpec,
    pub abcr: AbcrSettings,
    pub grid_points: usize,
}

impl Default for SensitivityConfig {
    fn default() -> Self {
        Self {
            n: 31,
            mu0: 0.0,
            sigma0: 1.0,
            c_grid: (-15..=15).collect(),
            methods: vec![SensitivityMethod::Abcr, SensitivityMethod::Genuine, SensitivityMethod::EmpiricalLikelihood],
            tuning: TuningConstants::default(),
            prior: PriorSpec::toy_default(),
            abcr: AbcrSettings::default(),
            grid_points: DEFAULT_GRID_POINTS,
        }
    }
}

/// Posterior median and quartiles of one parameter at one `c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub method: SensitivityMethod,
    pub c: i32,
    pub parameter: String,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
    pub seed: u64,
    pub stream: u64,
    pub config_hash: String,
}

#[derive(Debug, Clone)]
pub struct SensitivityTable {
    pub base_sample: Vec<f64>,
    /// ABC-R kernel scale, calibrated once on the uncontaminated sample.
    pub h: Option<f64>,
    pub rows: Vec<SensitivityRow>,
}

impl SensitivityTable {
    pub fn row(&self, method: SensitivityMethod, c: i32, parameter: &str) -> Option<&SensitivityRow> {
        self.rows.iter().find(|r| r.method == method && r.c == c && r.parameter == parameter)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_rows(&self.rows, writer)
    }
}

pub(crate) fn write_rows<T: Serialize, W: Write>(rows: &[T], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// The sample with its middle order statistic shifted by `c`, in sorted order.
pub fn shift_middle(sample: &[f64], c: f64) -> Vec<f64> {
    let mut y = sorted_copy(sample);
    let mid = y.len() / 2;
    y[mid] += c;
    y
}

type Quartiles = [(f64, f64, f64); 2];

fn quartiles_of(columns: [Vec<f64>; 2]) -> Quartiles {
    columns.map(|col| {
        let s = sorted_copy(&col);
        (quantile_sorted(&s, 0.5), quantile_sorted(&s, 0.25), quantile_sorted(&s, 0.75))
    })
}

/// Shifts the middle order statistic of one base sample over `c_grid` and
/// records each method's posterior median and quartiles for `(μ, σ)`.
///
/// Every `c` reuses the same random streams per method, and ABC-R keeps the
/// kernel scale calibrated at `c = 0`, so differences across `c` come from
/// the data alone.
pub fn sensitivity_study(cfg: &SensitivityConfig, rng: &RngStream) -> Result<SensitivityTable> {
    if cfg.n < 3 || cfg.n % 2 == 0 {
        return Err(Error::InvalidInput(format!("base sample size must be odd and >= 3, got {}", cfg.n)));
    }
    let theta0 = ToyTheta::new(cfg.mu0, cfg.sigma0)?;
    let base = toy_simulate(theta0, cfg.n, ContaminationSpec::none(), &mut rng.named("base_sample"));
    let model = ToyModel::new(cfg.n, cfg.tuning);
    let hash = config_hash(cfg)?;

    let uses_abcr = cfg.methods.contains(&SensitivityMethod::Abcr);
    let mut abcr = cfg.abcr.clone();
    if uses_abcr && abcr.h.is_none() {
        let (_, _, _, h0) = prepare_abcr(&model, &shift_middle(&base, 0.0), &cfg.prior, &abcr, &rng.named("abcr"))?;
        abcr.h = Some(h0);
    }
    let h = if uses_abcr { abcr.h } else { None };

    let fits = par::map_indexed(cfg.c_grid.len(), |i| -> Result<Vec<(SensitivityMethod, Quartiles)>> {
        let y = shift_middle(&base, f64::from(cfg.c_grid[i]));
        cfg.methods
            .iter()
            .map(|&m| {
                let q = match m {
                    SensitivityMethod::Abcr => {
                        let fit = fit_abcr(&model, &y, &cfg.prior, &abcr, &rng.named("abcr"))?;
                        quartiles_of([fit.chain.column(0), fit.chain.column(1)])
                    }
                    SensitivityMethod::Genuine | SensitivityMethod::EmpiricalLikelihood => {
                        let kind = if m == SensitivityMethod::Genuine { GridKind::Genuine } else { GridKind::EmpiricalLikelihood };
                        let post = grid_posterior_auto(kind, &y, &cfg.prior, cfg.tuning, cfg.grid_points)?;
                        [0, 1].map(|a| {
                            let mg = post.marginal(a);
                            (mg.median(), mg.quantile(0.25), mg.quantile(0.75))
                        })
                    }
                };
                Ok((m, q))
            })
            .collect()
    });

    let mut rows = Vec::with_capacity(cfg.c_grid.len() * cfg.methods.len() * 2);
    for (i, fit) in fits.into_iter().enumerate() {
        for (method, q) in fit? {
            for (k, name) in ["mu", "sigma"].iter().enumerate() {
                rows.push(SensitivityRow {
                    method,
                    c: cfg.c_grid[i],
                    parameter: name.to_string(),
                    median: q[k].0,
                    q25: q[k].1,
                    q75: q[k].2,
                    seed: rng.seed(),
                    stream: rng.stream(),
                    config_hash: hash.clone(),
                });
            }
        }
    }
    rows.sort_by(|a, b| (a.method.as_str(), &a.parameter, a.c).cmp(&(b.method.as_str(), &b.parameter, b.c)));
    Ok(SensitivityTable { base_sample: base, h, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shift_touches_only_the_median() {
        let y = [5.0, 1.0, 3.0, 2.0, 4.0];
        assert_eq!(shift_middle(&y, 10.0), vec![1.0, 2.0, 13.0, 4.0, 5.0]);
        assert_eq!(shift_middle(&y, 0.0), vec![1.0, 2.0, 3.0, 4.0, 5.0]);
    }

    #[test]
    fn even_sample_rejected() {
        let cfg = SensitivityConfig { n: 30, ..Default::default() };
        assert!(sensitivity_study(&cfg, &RngStream::new(1, 0)).is_err());
    }

    #[test]
    fn grid_methods_small_table() {
        let cfg = SensitivityConfig {
            c_grid: vec![-15, 0, 15],
            methods: vec![SensitivityMethod::Genuine, SensitivityMethod::EmpiricalLikelihood],
            grid_points: 61,
            ..Default::default()
        };
        let t = sensitivity_study(&cfg, &RngStream::new(2, 0)).unwrap();
        assert_eq!(t.rows.len(), 3 * 2 * 2);
        assert!(t.h.is_none());
        let g = |c| t.row(SensitivityMethod::Genuine, c, "mu").unwrap().median;
        assert!(g(-15) < g(0) && g(0) < g(15));
        for r in &t.rows {
            assert!(r.q25 <= r.median && r.median <= r.q75);
        }
    }
}
