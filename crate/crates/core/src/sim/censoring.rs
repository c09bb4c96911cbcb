//! Independent exponential censoring calibrated to a target fraction.

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use super::generators::SimDataset;
use crate::error::{Error, Result};

pub const LIGHT_TARGET: f64 = 0.20;
pub const HEAVY_TARGET: f64 = 0.45;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CensoringLevel {
    None,
    Light,
    Heavy,
}

impl CensoringLevel {
    pub const ALL: [CensoringLevel; 3] = [CensoringLevel::None, CensoringLevel::Light, CensoringLevel::Heavy];

    pub fn label(self) -> &'static str {
        match self {
            CensoringLevel::None => "none",
            CensoringLevel::Light => "light",
            CensoringLevel::Heavy => "heavy",
        }
    }
}

/// Target censored fractions for each level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CensoringTargets {
    pub light: f64,
    pub heavy: f64,
}

impl Default for CensoringTargets {
    fn default() -> Self {
        CensoringTargets {
            light: LIGHT_TARGET,
            heavy: HEAVY_TARGET,
        }
    }
}

impl CensoringTargets {
    pub fn target(&self, level: CensoringLevel) -> f64 {
        match level {
            CensoringLevel::None => 0.0,
            CensoringLevel::Light => self.light,
            CensoringLevel::Heavy => self.heavy,
        }
    }
}

/// Expected censored fraction `n⁻¹ Σ (1 - exp(-λ T_i))` under
/// `C ~ Exponential(λ)`.
pub fn expected_censored_fraction(times: &[f64], rate: f64) -> f64 {
    times.iter().map(|&t| -(-rate * t).exp_m1()).sum::<f64>() / times.len() as f64
}

/// Rate `λ` whose expected censored fraction on `times` equals `target`,
/// by bisection on `log λ`.
pub fn calibrate_censoring_rate(times: &[f64], target: f64) -> Result<f64> {
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::Config(format!("censoring target must lie in (0, 1), got {target}")));
    }
    let (mut lo, mut hi) = (1e-12f64, 1.0f64);
    while expected_censored_fraction(times, hi) < target {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(Error::Calibration(format!(
                "could not bracket a censoring rate for target {target}"
            )));
        }
    }
    if expected_censored_fraction(times, lo) > target {
        return Err(Error::Calibration(format!(
            "could not bracket a censoring rate for target {target}"
        )));
    }
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if expected_censored_fraction(times, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi / lo - 1.0 < 1e-12 {
            break;
        }
    }
    Ok((lo * hi).sqrt())
}

/// `Y = min(T, C)`, `δ = 1{T <= C}` with the rate calibrated on the
/// dataset's own latent times.
pub fn apply_censoring<R: Rng + ?Sized>(
    ds: &SimDataset,
    level: CensoringLevel,
    targets: &CensoringTargets,
    rng: &mut R,
) -> Result<SimDataset> {
    let mut out = ds.clone();
    if level == CensoringLevel::None {
        out.data.y = ds.times.clone();
        out.data.delta = vec![true; ds.times.len()];
        return Ok(out);
    }
    let rate = calibrate_censoring_rate(&ds.times, targets.target(level))?;
    let exp = Exp::new(rate).map_err(|e| Error::Numeric(e.to_string()))?;
    for (i, &t) in ds.times.iter().enumerate() {
        let c: f64 = exp.sample(rng);
        out.data.y[i] = t.min(c);
        out.data.delta[i] = t <= c;
    }
    if out.data.n_events() == 0 {
        return Err(Error::Numeric("censoring removed every event".into()));
    }
    Ok(out)
}
