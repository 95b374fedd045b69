use std::f64::consts::PI;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::LN_2PI;

/// Prior for one coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorComponent {
    Normal { mean: f64, sd: f64 },
    /// Half-Cauchy on the coordinate itself: `2 / (π a (1 + (x/a)²))`, `x > 0`.
    HalfCauchy { scale: f64 },
    /// Half-Cauchy on the square root of the coordinate (e.g. a variance
    /// whose standard deviation is half-Cauchy).
    HalfCauchySqrt { scale: f64 },
}

impl PriorComponent {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            PriorComponent::Normal { mean, sd } => mean.is_finite() && sd > 0.0 && sd.is_finite(),
            PriorComponent::HalfCauchy { scale } | PriorComponent::HalfCauchySqrt { scale } => {
                scale > 0.0 && scale.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid prior component {self:?}")))
        }
    }

    pub fn is_positive(&self) -> bool {
        !matches!(self, PriorComponent::Normal { .. })
    }

    /// Log-density; `−∞` outside the support.
    pub fn log_density(&self, x: f64) -> f64 {
        match *self {
            PriorComponent::Normal { mean, sd } => {
                let z = (x - mean) / sd;
                -0.5 * z * z - sd.ln() - 0.5 * LN_2PI
            }
            PriorComponent::HalfCauchy { scale } => half_cauchy_log(x, scale),
            PriorComponent::HalfCauchySqrt { scale } => {
                if x > 0.0 {
                    let s = x.sqrt();
                    half_cauchy_log(s, scale) - (2.0 * s).ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }
}

fn half_cauchy_log(x: f64, a: f64) -> f64 {
    if x > 0.0 && x.is_finite() {
        (2.0 / (PI * a)).ln() - (x / a).powi(2).ln_1p()
    } else {
        f64::NEG_INFINITY
    }
}

/// Independent product prior over the parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSpec {
    pub components: Vec<PriorComponent>,
}

impl PriorSpec {
    pub fn new(components: Vec<PriorComponent>) -> Result<Self> {
        for c in &components {
            c.validate()?;
        }
        Ok(Self { components })
    }

    /// `μ ~ N(0, 10²)`, `σ ~ half-Cauchy(5)`.
    pub fn toy_default() -> Self {
        Self {
            components: vec![
                PriorComponent::Normal { mean: 0.0, sd: 10.0 },
                PriorComponent::HalfCauchy { scale: 5.0 },
            ],
        }
    }

    /// `α ~ N_q(0, 10² I)`, `σ₁², σ₂²` independent half-Cauchy(7).
    pub fn lmm_default(q: usize) -> Self {
        let mut components = vec![PriorComponent::Normal { mean: 0.0, sd: 10.0 }; q];
        components.extend([PriorComponent::HalfCauchy { scale: 7.0 }; 2]);
        Self { components }
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn check_dim(&self, d: usize) -> Result<()> {
        if self.dim() == d {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("prior has {} components, model has {d} parameters", self.dim())))
        }
    }

    pub fn log_density(&self, theta: &DVector<f64>) -> f64 {
        self.components.iter().zip(theta.iter()).map(|(c, &x)| c.log_density(x)).sum()
    }
}
