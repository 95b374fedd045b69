use std::io::Write;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Settings and outcome of a sampler run, serialized next to the draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainMeta {
    pub method: String,
    pub param_names: Vec<String>,
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub accepted: usize,
    /// `accepted / n_iter`, burn-in included.
    pub acceptance_rate: f64,
    /// Acceptance rate over the post-burn-in iterations only.
    pub post_burn_in_acceptance: f64,
    /// Kernel bandwidth (variance scale); absent for likelihood-based samplers.
    pub h: Option<f64>,
    pub seed: u64,
    pub stream: u64,
    pub stuck: bool,
}

/// Thinned post-burn-in draws with run metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    pub draws: Vec<DVector<f64>>,
    /// `‖η‖` of the current state after every iteration (ABC-R only).
    pub summary_norms: Vec<f64>,
    pub meta: ChainMeta,
}

/// Chains accepting less often than this are flagged as stuck.
pub const STUCK_RATE: f64 = 1e-4;

impl Chain {
    pub fn acceptance_rate(&self) -> f64 {
        self.meta.acceptance_rate
    }

    pub fn dim(&self) -> usize {
        self.meta.param_names.len()
    }

    /// Draws of coordinate `k`.
    pub fn column(&self, k: usize) -> Vec<f64> {
        self.draws.iter().map(|d| d[k]).collect()
    }

    /// One row per draw; values use Rust's shortest round-trip formatting so
    /// identical chains serialize to identical bytes.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(&self.meta.param_names)?;
        for d in &self.draws {
            w.write_record(d.iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_meta_json<W: Write>(&self, writer: W) -> Result<()> {
        serde_json::to_writer_pretty(writer, &self.meta)?;
        Ok(())
    }
}

pub(crate) fn finish_meta(meta: &mut ChainMeta, post_accepted: usize) {
    meta.acceptance_rate = meta.accepted as f64 / meta.n_iter as f64;
    let post = meta.n_iter - meta.burn_in;
    meta.post_burn_in_acceptance = if post > 0 { post_accepted as f64 / post as f64 } else { 0.0 };
    meta.stuck = meta.acceptance_rate < STUCK_RATE;
    if meta.stuck {
        log::warn!("{} chain is stuck: acceptance rate {:.2e}", meta.method, meta.acceptance_rate);
    }
}
