use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{el_wstat, PriorSpec};
use crate::error::{Error, Result};
use crate::estfun::{consistency_k, TuningConstants};
use crate::numerics::{mean, variance};
use crate::par;
use crate::toy::{toy_loglik, toy_solve, ToyModel, ToyTheta};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridKind {
    Genuine,
    EmpiricalLikelihood,
}

/// Equally spaced axes `[lo, hi]` for `(μ, σ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub mu: (f64, f64),
    pub sigma: (f64, f64),
    pub points: usize,
}

pub const DEFAULT_GRID_POINTS: usize = 201;
pub const DEFAULT_GRID_WIDTH: f64 = 6.0;

impl GridSpec {
    /// `centre ± width · se` per axis, with the σ axis kept positive.
    pub fn around(centre: ToyTheta, se: (f64, f64), width: f64, points: usize) -> Self {
        let s_lo = (centre.sigma - width * se.1).max(centre.sigma * 1e-3);
        Self {
            mu: (centre.mu - width * se.0, centre.mu + width * se.0),
            sigma: (s_lo, centre.sigma + width * se.1),
            points,
        }
    }

    /// Default grid for `kind`: the Gaussian MLE with its classical standard
    /// errors for the genuine posterior, the M-estimate with sandwich
    /// standard errors for the empirical-likelihood posterior.
    pub fn default_for(kind: GridKind, y: &[f64], tc: TuningConstants, width: f64, points: usize) -> Result<Self> {
        let n = y.len() as f64;
        match kind {
            GridKind::Genuine => {
                let s = (variance(y) * (n - 1.0) / n).sqrt();
                if !(s > 0.0) {
                    return Err(Error::DegenerateSample("zero sample variance".into()));
                }
                let centre = ToyTheta::new(mean(y), s)?;
                Ok(Self::around(centre, (s / n.sqrt(), s / (2.0 * n).sqrt()), width, points))
            }
            GridKind::EmpiricalLikelihood => {
                let th = toy_solve(y, tc)?;
                let k = ToyModel::new(y.len(), tc).analytic_k(&th.to_vector())?;
                Ok(Self::around(th, (k[(0, 0)].sqrt(), k[(1, 1)].sqrt()), width, points))
            }
        }
    }

    fn axis(range: (f64, f64), n: usize) -> Vec<f64> {
        (0..n).map(|i| range.0 + (range.1 - range.0) * i as f64 / (n - 1) as f64).collect()
    }
}

/// Trapezoid weights for an equally spaced axis.
fn trapezoid_weights(axis: &[f64]) -> Vec<f64> {
    let n = axis.len();
    let dx = axis[1] - axis[0];
    (0..n).map(|i| if i == 0 || i == n - 1 { 0.5 * dx } else { dx }).collect()
}

/// Posterior density of the toy model tabulated on a rectangular grid.
#[derive(Debug, Clone)]
pub struct GridPosterior {
    pub kind: GridKind,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    /// `density[i][j]` at `(mu[i], sigma[j])`, normalized to integrate to one.
    pub density: Vec<Vec<f64>>,
    /// Posterior mass on the outermost rows and columns.
    pub boundary_mass: f64,
}

/// Tabulates `π(θ) L(θ)` with `L = exp(ℓ)` (genuine) or `exp(−W_E/2)`
/// (empirical likelihood, zero where `W_E = ∞`) and normalizes it by the
/// trapezoid rule.
pub fn grid_posterior(kind: GridKind, y: &[f64], prior: &PriorSpec, tc: TuningConstants, spec: &GridSpec) -> Result<GridPosterior> {
    prior.check_dim(2)?;
    if spec.points < 3 {
        return Err(Error::InvalidInput("grid needs at least 3 points per axis".into()));
    }
    let mu = GridSpec::axis(spec.mu, spec.points);
    let sigma = GridSpec::axis(spec.sigma, spec.points);
    let rows = par::map_indexed(mu.len(), |i| -> Result<Vec<f64>> {
        sigma
            .iter()
            .map(|&s| {
                let th = ToyTheta { mu: mu[i], sigma: s };
                let lp = prior.log_density(&th.to_vector());
                if lp == f64::NEG_INFINITY {
                    return Ok(lp);
                }
                let ll = match kind {
                    GridKind::Genuine => toy_loglik(y, th),
                    GridKind::EmpiricalLikelihood => -0.5 * el_wstat(y, th, tc)?,
                };
                Ok(lp + ll)
            })
            .collect()
    });
    let log_table = rows.into_iter().collect::<Result<Vec<_>>>()?;
    let max = log_table.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::DegenerateSample("posterior is zero on the whole grid".into()));
    }
    let (wm, ws) = (trapezoid_weights(&mu), trapezoid_weights(&sigma));
    let mut density: Vec<Vec<f64>> = log_table.iter().map(|r| r.iter().map(|l| (l - max).exp()).collect()).collect();
    let mut total = 0.0;
    let mut boundary = 0.0;
    let last = spec.points - 1;
    for (i, row) in density.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            let m = wm[i] * ws[j] * v;
            total += m;
            if i == 0 || j == 0 || i == last || j == last {
                boundary += m;
            }
        }
    }
    for row in density.iter_mut() {
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    let boundary_mass = boundary / total;
    if boundary_mass > 1e-3 {
        return Err(Error::GridTooNarrow { mass: boundary_mass });
    }
    Ok(GridPosterior { kind, mu, sigma, density, boundary_mass })
}

/// Box containing the support of the empirical-likelihood posterior: `W_E`
/// is infinite once `μ` leaves `[min y, max y]`, and once every standardized
/// residual falls below `√k(c₂)` in absolute value.
fn el_support(y: &[f64], tc: TuningConstants, points: usize) -> GridSpec {
    let lo = y.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s_max = (hi - lo) / consistency_k(tc.c2).sqrt();
    GridSpec { mu: (lo, hi), sigma: (s_max * 1e-4, s_max), points }
}

/// Shrinks `post`'s grid to the cells whose density is at least `1e-12` of
/// the maximum, plus one cell of margin.
fn shrink_to_mass(post: &GridPosterior, points: usize) -> GridSpec {
    let max = post.density.iter().flatten().copied().fold(0.0, f64::max);
    let (mut i0, mut i1, mut j0, mut j1) = (usize::MAX, 0, usize::MAX, 0);
    for (i, row) in post.density.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if v >= 1e-12 * max {
                (i0, i1, j0, j1) = (i0.min(i), i1.max(i), j0.min(j), j1.max(j));
            }
        }
    }
    let (nm, ns) = (post.mu.len() - 1, post.sigma.len() - 1);
    GridSpec {
        mu: (post.mu[i0.saturating_sub(1)], post.mu[(i1 + 1).min(nm)]),
        sigma: (post.sigma[j0.saturating_sub(1)], post.sigma[(j1 + 1).min(ns)]),
        points,
    }
}

/// [`grid_posterior`] on an automatically chosen grid.
///
/// The empirical-likelihood posterior has compact support, which is
/// tabulated first and then shrunk to where the mass lies; its tails can be
/// too heavy for a fixed number of standard errors when the sample contains
/// an outlier. The genuine posterior uses the default grid, widened by half
/// its width up to three times while too much mass sits on the boundary.
pub fn grid_posterior_auto(kind: GridKind, y: &[f64], prior: &PriorSpec, tc: TuningConstants, points: usize) -> Result<GridPosterior> {
    if kind == GridKind::EmpiricalLikelihood {
        let coarse = grid_posterior(kind, y, prior, tc, &el_support(y, tc, points))?;
        return grid_posterior(kind, y, prior, tc, &shrink_to_mass(&coarse, points));
    }
    let mut width = DEFAULT_GRID_WIDTH;
    let mut last = None;
    for _ in 0..4 {
        let spec = GridSpec::default_for(kind, y, tc, width, points)?;
        match grid_posterior(kind, y, prior, tc, &spec) {
            Err(e @ Error::GridTooNarrow { .. }) => {
                last = Some(e);
                width *= 1.5;
            }
            other => return other,
        }
    }
    Err(last.expect("at least one attempt"))
}

/// A marginal density on an equally spaced axis.
#[derive(Debug, Clone)]
pub struct Marginal {
    pub x: Vec<f64>,
    pub density: Vec<f64>,
}

impl Marginal {
    fn cdf(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.x.len()];
        for i in 1..self.x.len() {
            c[i] = c[i - 1] + 0.5 * (self.density[i] + self.density[i - 1]) * (self.x[i] - self.x[i - 1]);
        }
        let total = c[c.len() - 1];
        c.iter().map(|v| v / total).collect()
    }

    /// Quantile by inverting the piecewise-quadratic cdf of the
    /// piecewise-linear density.
    pub fn quantile(&self, p: f64) -> f64 {
        let c = self.cdf();
        let i = c.partition_point(|&v| v < p).clamp(1, c.len() - 1);
        let (x0, x1) = (self.x[i - 1], self.x[i]);
        let dx = x1 - x0;
        let total: f64 = (1..self.x.len())
            .map(|k| 0.5 * (self.density[k] + self.density[k - 1]) * (self.x[k] - self.x[k - 1]))
            .sum();
        let (f0, f1) = (self.density[i - 1] / total, self.density[i] / total);
        let need = p - c[i - 1];
        // solve f0 u + (f1 − f0) u² / (2 dx) = need for u ∈ [0, dx]
        let a = (f1 - f0) / (2.0 * dx);
        let u = if a.abs() < 1e-14 * (f0.abs() + f1.abs() + 1e-300) / dx {
            if f0 > 0.0 {
                need / f0
            } else {
                0.0
            }
        } else {
            let disc = (f0 * f0 + 4.0 * a * need).max(0.0);
            (-f0 + disc.sqrt()) / (2.0 * a)
        };
        x0 + u.clamp(0.0, dx)
    }

    pub fn mean(&self) -> f64 {
        let w = trapezoid_weights(&self.x);
        let norm: f64 = w.iter().zip(&self.density).map(|(a, b)| a * b).sum();
        w.iter().zip(&self.density).zip(&self.x).map(|((a, b), x)| a * b * x).sum::<f64>() / norm
    }

    pub fn median(&self) -> f64 {
        self.quantile(0.5)
    }

    /// Location of the largest tabulated density.
    pub fn mode(&self) -> f64 {
        let i = (0..self.x.len()).max_by(|&a, &b| self.density[a].total_cmp(&self.density[b])).unwrap();
        self.x[i]
    }
}

impl GridPosterior {
    /// Marginal of `μ` (`axis = 0`) or `σ` (`axis = 1`).
    pub fn marginal(&self, axis: usize) -> Marginal {
        match axis {
            0 => {
                let ws = trapezoid_weights(&self.sigma);
                Marginal {
                    x: self.mu.clone(),
                    density: self.density.iter().map(|r| r.iter().zip(&ws).map(|(d, w)| d * w).sum()).collect(),
                }
            }
            _ => {
                let wm = trapezoid_weights(&self.mu);
                Marginal {
                    x: self.sigma.clone(),
                    density: (0..self.sigma.len())
                        .map(|j| self.density.iter().zip(&wm).map(|(r, w)| r[j] * w).sum())
                        .collect(),
                }
            }
        }
    }

    /// `∫∫ density` by the trapezoid rule.
    pub fn total_mass(&self) -> f64 {
        let (wm, ws) = (trapezoid_weights(&self.mu), trapezoid_weights(&self.sigma));
        self.density.iter().zip(&wm).map(|(r, a)| r.iter().zip(&ws).map(|(d, b)| d * a * b).sum::<f64>()).sum()
    }

    /// Grid point of highest density.
    pub fn mode(&self) -> (f64, f64) {
        let mut best = (0, 0, f64::NEG_INFINITY);
        for (i, r) in self.density.iter().enumerate() {
            for (j, &d) in r.iter().enumerate() {
                if d > best.2 {
                    best = (i, j, d);
                }
            }
        }
        (self.mu[best.0], self.sigma[best.1])
    }

    /// Long format: `mu,sigma,density`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["mu", "sigma", "density"])?;
        for (i, r) in self.density.iter().enumerate() {
            for (j, d) in r.iter().enumerate() {
                w.write_record([self.mu[i].to_string(), self.sigma[j].to_string(), d.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}
