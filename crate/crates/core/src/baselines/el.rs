use microlp::{ComparisonOp, OptimizationDirection, Problem};
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::estfun::TuningConstants;
use crate::toy::{toy_psi_units, ToyTheta};

const MAX_NEWTON: usize = 100;

/// Owen's pseudo-logarithm: `log x` for `x ≥ ε`, its second-order Taylor
/// expansion at `ε` below. Returns the value and first two derivatives.
fn pseudo_log(x: f64, eps: f64) -> (f64, f64, f64) {
    if x >= eps {
        (x.ln(), 1.0 / x, -1.0 / (x * x))
    } else {
        let r = x / eps;
        (eps.ln() - 1.5 + 2.0 * r - 0.5 * r * r, (2.0 - r) / eps, -1.0 / (eps * eps))
    }
}

/// Whether `0` lies strictly inside the convex hull of the rows: the LP
/// `max t` subject to `Σ p_i ψ_i = 0`, `Σ p_i = 1`, `p_i ≥ t ≥ 0` has a
/// positive optimum.
pub fn zero_in_hull_interior(psi: &[DVector<f64>]) -> Result<bool> {
    let n = psi.len();
    let d = psi[0].len();
    let scales: Vec<f64> = (0..d).map(|k| psi.iter().map(|p| p[k].abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE)).collect();
    let mut lp = Problem::new(OptimizationDirection::Maximize);
    let t = lp.add_var(1.0, (0.0, 1.0));
    let p: Vec<_> = (0..n).map(|_| lp.add_var(0.0, (0.0, 1.0))).collect();
    for k in 0..d {
        let row: Vec<_> = p.iter().zip(psi).map(|(&v, x)| (v, x[k] / scales[k])).collect();
        lp.add_constraint(row.as_slice(), ComparisonOp::Eq, 0.0);
    }
    let ones: Vec<_> = p.iter().map(|&v| (v, 1.0)).collect();
    lp.add_constraint(ones.as_slice(), ComparisonOp::Eq, 1.0);
    for &v in &p {
        lp.add_constraint([(v, 1.0), (t, -1.0)].as_slice(), ComparisonOp::Ge, 0.0);
    }
    match lp.solve() {
        Ok(outcome) => {
            let sol = outcome
                .into_solution()
                .map_err(|_| Error::NewtonFailure("hull LP was interrupted".into()))?;
            Ok(sol.objective() > 1e-9 / n as f64)
        }
        Err(microlp::Error::Infeasible) => Ok(false),
        Err(e) => Err(Error::NewtonFailure(format!("hull LP failed: {e}"))),
    }
}

/// Empirical-likelihood statistic `W_E = 2 Σ log(1 + ηᵀψ_i)` for the
/// per-unit contributions `ψ_i`, with `η` solving `Σ ψ_i / (1 + ηᵀψ_i) = 0`.
///
/// `η` maximizes the concave dual `Σ log*(1 + ηᵀψ_i)` where `log*` is the
/// pseudo-logarithm below `1/n` (damped Newton). Returns `+∞` when zero is not
/// strictly inside the convex hull of the `ψ_i`.
pub fn el_wstat_units(psi: &[DVector<f64>]) -> Result<f64> {
    let n = psi.len();
    if n == 0 {
        return Err(Error::InvalidInput("no units".into()));
    }
    let d = psi[0].len();
    if n < d + 1 {
        return Err(Error::InvalidInput(format!("empirical likelihood needs n >= d + 1, got n = {n}, d = {d}")));
    }
    if psi.iter().any(|p| p.len() != d || p.iter().any(|v| !v.is_finite())) {
        return Err(Error::InvalidInput("unit contributions must be finite and of equal length".into()));
    }
    // A coordinate of constant sign rules out the hull immediately.
    for k in 0..d {
        if psi.iter().all(|p| p[k] > 0.0) || psi.iter().all(|p| p[k] < 0.0) {
            return Ok(f64::INFINITY);
        }
    }
    let eps = 1.0 / n as f64;
    let dual = |eta: &DVector<f64>| -> (f64, DVector<f64>, DMatrix<f64>) {
        let (mut val, mut grad, mut hess) = (0.0, DVector::zeros(d), DMatrix::zeros(d, d));
        for p in psi {
            let (f, f1, f2) = pseudo_log(1.0 + eta.dot(p), eps);
            val += f;
            grad += p * f1;
            hess += p * p.transpose() * f2;
        }
        (val, grad, hess)
    };

    let scale: f64 = psi.iter().map(|p| p.norm()).fold(0.0, f64::max);
    let mut eta = DVector::zeros(d);
    let (mut val, mut grad, mut hess) = dual(&eta);
    let mut converged = false;
    for _ in 0..MAX_NEWTON {
        let step = match (-hess.clone()).cholesky() {
            Some(c) => c.solve(&grad),
            None => break,
        };
        // Newton decrement: predicted increase of the dual
        let decrement = grad.dot(&step);
        if decrement <= 1e-14 * (1.0 + val.abs()) {
            converged = true;
            break;
        }
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let cand = &eta + &step * t;
            let (v, g, h) = dual(&cand);
            if v.is_finite() && v > val + 1e-4 * t * decrement {
                eta = cand;
                (val, grad, hess) = (v, g, h);
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            // no representable progress left
            converged = decrement <= 1e-12 * (1.0 + val.abs());
            break;
        }
        if eta.amax() * scale > 1e12 {
            break;
        }
    }
    let inside = converged && psi.iter().all(|p| 1.0 + eta.dot(p) >= eps * (1.0 - 1e-9));
    if inside {
        let w: f64 = psi.iter().map(|p| 2.0 * (1.0 + eta.dot(p)).ln()).sum();
        return Ok(w.max(0.0));
    }
    if zero_in_hull_interior(psi)? {
        Err(Error::NewtonFailure(format!(
            "zero is inside the convex hull but the dual Newton iteration stopped at gradient {:.3e}",
            grad.amax()
        )))
    } else {
        Ok(f64::INFINITY)
    }
}

/// `W_E(θ)` for the toy location-scale estimating function.
pub fn el_wstat(y: &[f64], theta: ToyTheta, tc: TuningConstants) -> Result<f64> {
    let units: Vec<DVector<f64>> =
        toy_psi_units(y, theta, tc).into_iter().map(|u| DVector::from_vec(u.to_vec())).collect();
    el_wstat_units(&units)
}
