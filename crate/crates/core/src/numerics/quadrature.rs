//! Adaptive Gauss–Kronrod (7/15) quadrature.

use super::norm_pdf;
use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
// 7-point Gauss weights at XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

fn kronrod15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for j in 0..7 {
        let x = h * XGK[j];
        let s = f(c - x) + f(c + x);
        k += WGK[j] * s;
        if j % 2 == 1 {
            g += WG[j / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

/// Tolerance and budget for adaptive integration.
#[derive(Debug, Clone, Copy)]
pub struct Quadrature {
    pub abs_tol: f64,
    pub max_intervals: usize,
}

impl Default for Quadrature {
    fn default() -> Self {
        Self { abs_tol: 1e-13, max_intervals: 20_000 }
    }
}

impl Quadrature {
    /// `∫_a^b f` with the interval pre-split at `breaks` (which may be empty).
    pub fn integrate_with_breaks<F: Fn(f64) -> f64>(
        &self,
        f: F,
        a: f64,
        b: f64,
        breaks: &[f64],
    ) -> Result<f64> {
        let mut pts: Vec<f64> = std::iter::once(a)
            .chain(breaks.iter().copied().filter(|&x| x > a && x < b))
            .chain(std::iter::once(b))
            .collect();
        pts.sort_by(|x, y| x.total_cmp(y));
        pts.dedup();
        let mut intervals: Vec<(f64, f64, f64, f64)> = pts
            .windows(2)
            .map(|w| {
                let (v, e) = kronrod15(&f, w[0], w[1]);
                (w[0], w[1], v, e)
            })
            .collect();
        loop {
            let err: f64 = intervals.iter().map(|t| t.3).sum();
            if err <= self.abs_tol {
                break;
            }
            if intervals.len() >= self.max_intervals {
                return Err(Error::NoConvergence {
                    what: format!("adaptive quadrature (error estimate {err:.3e})"),
                    iterations: intervals.len(),
                });
            }
            let (idx, _) = intervals
                .iter()
                .enumerate()
                .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
                .expect("nonempty");
            let (lo, hi, _, _) = intervals.swap_remove(idx);
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                return Err(Error::NoConvergence {
                    what: "adaptive quadrature (interval underflow)".into(),
                    iterations: intervals.len(),
                });
            }
            let (v1, e1) = kronrod15(&f, lo, mid);
            let (v2, e2) = kronrod15(&f, mid, hi);
            intervals.push((lo, mid, v1, e1));
            intervals.push((mid, hi, v2, e2));
        }
        intervals.sort_by(|x, y| x.0.total_cmp(&y.0));
        Ok(intervals.iter().map(|t| t.2).sum())
    }

    /// `∫ f(z) φ(z) dz` over the real line.
    pub fn normal_expectation<F: Fn(f64) -> f64>(&self, f: F) -> Result<f64> {
        self.normal_expectation_with_breaks(f, &[])
    }

    /// As [`Quadrature::normal_expectation`], with extra split points at known
    /// kinks or jumps of `f`.
    pub fn normal_expectation_with_breaks<F: Fn(f64) -> f64>(&self, f: F, kinks: &[f64]) -> Result<f64> {
        const L: f64 = 30.0;
        let mut breaks = vec![-12.0, -8.0, -5.0, -3.0, -1.5, 0.0, 1.5, 3.0, 5.0, 8.0, 12.0];
        breaks.extend_from_slice(kinks);
        self.integrate_with_breaks(|z| f(z) * norm_pdf(z), -L, L, &breaks)
    }
}

/// `∫ f(z) φ(z) dz` with the default tolerance (absolute error ≲ 1e-13).
pub fn gauss_quadrature<F: Fn(f64) -> f64>(f: F) -> Result<f64> {
    Quadrature::default().normal_expectation(f)
}

/// `∫_a^b f(x) dx` with the default tolerance.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> Result<f64> {
    Quadrature::default().integrate_with_breaks(f, a, b, &[])
}
