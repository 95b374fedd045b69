//! Long-format grouped data: one row per (unit, response, treatment)
//! measurement with columns `unit_id,response,treatment_code,gender_code,value`.

use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use super::{LmmDesign, LmmResponse};
use crate::error::{Error, Result};
use crate::numerics::RngStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongRow {
    pub unit_id: String,
    pub response: String,
    pub treatment_code: String,
    pub gender_code: u8,
    /// Missing measurements are read as `None` and skipped.
    pub value: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ValueTransform {
    #[default]
    Identity,
    Log,
    /// `log(1 + v)`, for responses with exact zeros.
    Log1p,
}

impl ValueTransform {
    pub fn apply(self, v: f64) -> Result<f64> {
        let out = match self {
            ValueTransform::Identity => v,
            ValueTransform::Log => v.ln(),
            ValueTransform::Log1p => v.ln_1p(),
        };
        if out.is_finite() {
            Ok(out)
        } else {
            Err(Error::InvalidInput(format!("value {v} is outside the domain of the {self:?} transform")))
        }
    }
}

pub fn read_long<R: Read>(reader: R) -> Result<Vec<LongRow>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut rows = Vec::new();
    for rec in rdr.deserialize::<RawRow>() {
        let raw = rec?;
        let value = match raw.value.as_str() {
            "" | "NA" | "na" | "NaN" => None,
            s => Some(s.parse::<f64>().map_err(|_| Error::InvalidInput(format!("cannot parse value {s:?}")))?),
        };
        if raw.gender_code > 1 {
            return Err(Error::InvalidInput(format!("gender_code must be 0 or 1, got {}", raw.gender_code)));
        }
        rows.push(LongRow {
            unit_id: raw.unit_id,
            response: raw.response,
            treatment_code: raw.treatment_code,
            gender_code: raw.gender_code,
            value,
        });
    }
    Ok(rows)
}

#[derive(Deserialize)]
struct RawRow {
    unit_id: String,
    response: String,
    treatment_code: String,
    gender_code: u8,
    value: String,
}

pub fn read_long_path(path: &Path) -> Result<Vec<LongRow>> {
    read_long(std::fs::File::open(path)?)
}

pub fn write_long<W: Write>(rows: &[LongRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["unit_id", "response", "treatment_code", "gender_code", "value"])?;
    for r in rows {
        let value = r.value.map(|v| v.to_string()).unwrap_or_else(|| "NA".into());
        w.write_record([r.unit_id.as_str(), &r.response, &r.treatment_code, &r.gender_code.to_string(), &value])?;
    }
    w.flush()?;
    Ok(())
}

/// Treatment codes in model order: a code named `baseline` (or `0`) first as
/// the reference level, the rest numerically if all codes are integers,
/// otherwise lexically.
fn treatment_levels(rows: &[&LongRow]) -> Vec<String> {
    let codes: BTreeSet<&str> = rows.iter().map(|r| r.treatment_code.as_str()).collect();
    let mut levels: Vec<String> = codes.into_iter().map(str::to_string).collect();
    if levels.iter().all(|c| c.parse::<i64>().is_ok()) {
        levels.sort_by_key(|c| c.parse::<i64>().unwrap());
    }
    if let Some(pos) = levels.iter().position(|c| c.eq_ignore_ascii_case("baseline")) {
        let b = levels.remove(pos);
        levels.insert(0, b);
    }
    levels
}

/// A grouped dataset assembled from long-format rows.
#[derive(Debug, Clone)]
pub struct GroupedData {
    pub design: LmmDesign,
    pub y: LmmResponse,
    pub treatments: Vec<String>,
}

/// Builds the design for one response: intercept plus treatment dummies
/// against the first level, and with `interaction` additionally the gender
/// dummy and its products with the treatment dummies. Units appear in order
/// of first occurrence; rows with missing values are dropped and units left
/// without rows are omitted.
pub fn assemble(rows: &[LongRow], response: &str, interaction: bool, transform: ValueTransform) -> Result<GroupedData> {
    let selected: Vec<&LongRow> = rows.iter().filter(|r| r.response == response && r.value.is_some()).collect();
    if selected.is_empty() {
        return Err(Error::InvalidInput(format!("no observed rows for response {response:?}")));
    }
    let levels = treatment_levels(&selected);
    let t = levels.len();
    let q = if interaction { 2 * t } else { t };

    let mut units: Vec<(String, Vec<&LongRow>)> = Vec::new();
    for r in &selected {
        match units.iter_mut().find(|(id, _)| *id == r.unit_id) {
            Some((_, v)) => v.push(r),
            None => units.push((r.unit_id.clone(), vec![r])),
        }
    }

    let mut groups = Vec::with_capacity(units.len());
    let mut y = Vec::with_capacity(units.len());
    let mut ids = Vec::with_capacity(units.len());
    for (id, unit_rows) in units {
        let genders: BTreeSet<u8> = unit_rows.iter().map(|r| r.gender_code).collect();
        if genders.len() > 1 {
            return Err(Error::InvalidInput(format!("unit {id} has inconsistent gender codes")));
        }
        let mut x = DMatrix::zeros(unit_rows.len(), q);
        let mut v = DVector::zeros(unit_rows.len());
        for (i, r) in unit_rows.iter().enumerate() {
            let level = levels.iter().position(|l| *l == r.treatment_code).unwrap();
            let w = f64::from(r.gender_code);
            x[(i, 0)] = 1.0;
            if level > 0 {
                x[(i, level)] = 1.0;
            }
            if interaction {
                x[(i, t)] = w;
                if level > 0 {
                    x[(i, t + level)] = w;
                }
            }
            v[i] = transform.apply(r.value.unwrap())?;
        }
        groups.push(x);
        y.push(v);
        ids.push(id);
    }

    let mut names = vec!["(Intercept)".to_string()];
    names.extend(levels[1..].iter().map(|l| format!("treatment_{l}")));
    if interaction {
        names.push("gender".into());
        names.extend(levels[1..].iter().map(|l| format!("gender:treatment_{l}")));
    }
    let design = LmmDesign::new(groups, names, ids)?;
    Ok(GroupedData { design, y, treatments: levels })
}

/// Shape and noise settings for the synthetic immunology-style dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    /// Fraction of units whose residuals are drawn from a heavy-tailed law.
    pub heavy_tail_fraction: f64,
    /// Degrees of freedom of the heavy-tailed Student-t residuals.
    pub heavy_tail_df: f64,
    pub sigma1_sq: f64,
    pub sigma2_sq: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self { heavy_tail_fraction: 0.1, heavy_tail_df: 2.0, sigma1_sq: 0.3, sigma2_sq: 0.1 }
    }
}

pub const SYNTHETIC_TREATMENTS: [&str; 6] =
    ["baseline", "GRP94_10", "GRP94_100", "GRP94+IgG_10", "GRP94+IgG_100", "IgG_100"];
pub const SYNTHETIC_RESPONSES: [&str; 5] = ["IgG", "IFNg", "IL6", "IL10", "TNFa"];

/// Synthetic long-format data shaped like a small repeated-measures
/// immunology study: units 1..=28 without unit 15, six conditions per unit,
/// a gender dummy, and five positive responses on a log-normal scale. Units
/// 17, 27 and 28 only carry the first response, so it has 27 units and the
/// others 24.
pub fn generate_synthetic(spec: &SyntheticSpec, rng: &mut RngStream) -> Result<Vec<LongRow>> {
    if !(0.0..=1.0).contains(&spec.heavy_tail_fraction) || !(spec.heavy_tail_df > 0.0) {
        return Err(Error::InvalidInput("heavy-tail fraction must lie in [0, 1] and df be positive".into()));
    }
    let t = StudentT::new(spec.heavy_tail_df).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let units: Vec<u32> = (1..=28).filter(|&u| u != 15).collect();
    let gender: Vec<u8> = units.iter().map(|_| u8::from(rng.random::<f64>() < 0.5)).collect();
    let mut rows = Vec::new();
    for (r_idx, response) in SYNTHETIC_RESPONSES.iter().enumerate() {
        let mut rrng = rng.derive(r_idx as u64);
        let base = 2.0 + r_idx as f64;
        let effects: Vec<f64> = (0..6).map(|k| if k == 0 { 0.0 } else { rrng.random_range(-0.8..0.8) }).collect();
        let gender_effects: Vec<f64> = (0..6).map(|_| rrng.random_range(-0.3..0.3)).collect();
        for (u_idx, &u) in units.iter().enumerate() {
            if r_idx > 0 && matches!(u, 17 | 27 | 28) {
                continue;
            }
            let heavy = rrng.random::<f64>() < spec.heavy_tail_fraction;
            let b: f64 = rrng.sample::<f64, _>(StandardNormal) * spec.sigma1_sq.sqrt();
            let w = f64::from(gender[u_idx]);
            for (k, code) in SYNTHETIC_TREATMENTS.iter().enumerate() {
                let noise: f64 = if heavy { t.sample(&mut rrng) } else { rrng.sample(StandardNormal) };
                let eta = base + effects[k] + w * gender_effects[k] + b + noise * spec.sigma2_sq.sqrt();
                rows.push(LongRow {
                    unit_id: u.to_string(),
                    response: (*response).to_string(),
                    treatment_code: (*code).to_string(),
                    gender_code: gender[u_idx],
                    value: Some(eta.exp()),
                });
            }
        }
    }
    Ok(rows)
}
