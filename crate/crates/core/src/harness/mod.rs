//! Reproduction protocols built on the samplers: FBST evidence, posterior
//! summaries, the contamination sensitivity study and the mixed-model
//! simulation study.

mod fbst;
mod pipeline;
mod sensitivity;
mod simstudy;
mod summaries;

use serde::Serialize;

use crate::error::Result;
use crate::numerics::fnv1a64;

pub use fbst::{fbst_evidence, EvidenceResult, MIN_FBST_DRAWS};
pub use pipeline::{fit_abcr, prepare_abcr, AbcrFit, AbcrSettings};
pub use sensitivity::{shift_middle, sensitivity_study, SensitivityConfig, SensitivityMethod, SensitivityRow, SensitivityTable};
pub use simstudy::{
    draw_theta0, simulation_study, summarize_study, EfficiencyIndex, MethodSummary, Regime, SimStudyConfig,
    SimStudyFailure, SimStudyRecord, SimStudyResult, SimStudySummary, StudyMethod,
};
pub use summaries::{effective_sample_size, posterior_summaries, summarize, ParamSummary};

/// FNV-1a hash of the JSON serialization, as 16 hex digits.
pub fn config_hash<T: Serialize>(cfg: &T) -> Result<String> {
    Ok(format!("{:016x}", fnv1a64(&serde_json::to_vec(cfg)?)))
}
