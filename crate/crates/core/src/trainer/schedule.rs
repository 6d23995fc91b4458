use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Power-law step sizes `scale / (t + t0)^p` for the critic (`alpha`),
/// actor (`beta`) and multiplier (`gamma`) timescales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StepSchedule {
    pub alpha_exponent: f64,
    pub beta_exponent: f64,
    pub gamma_exponent: f64,
    pub offset: f64,
    pub alpha_scale: f64,
    pub beta_scale: f64,
    pub gamma_scale: f64,
}

impl Default for StepSchedule {
    fn default() -> Self {
        Self {
            alpha_exponent: 0.6,
            beta_exponent: 0.75,
            gamma_exponent: 0.9,
            offset: 1.0,
            alpha_scale: 1.0,
            beta_scale: 1.0,
            gamma_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSizes {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl StepSchedule {
    /// Requires `0.5 < p_alpha < p_beta < p_gamma <= 1`, a positive offset
    /// and positive scales.
    pub fn validate(&self) -> Result<()> {
        let (a, b, g) = (self.alpha_exponent, self.beta_exponent, self.gamma_exponent);
        if !(0.5 < a && a < b && b < g && g <= 1.0) {
            return Err(Error::config(format!(
                "step exponents must satisfy 0.5 < alpha < beta < gamma <= 1, got ({a}, {b}, {g})"
            )));
        }
        if !(self.offset > 0.0) {
            return Err(Error::config("schedule offset must be positive"));
        }
        for (name, v) in [
            ("alpha_scale", self.alpha_scale),
            ("beta_scale", self.beta_scale),
            ("gamma_scale", self.gamma_scale),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    pub fn at(&self, t: u64) -> StepSizes {
        let x = t as f64 + self.offset;
        StepSizes {
            alpha: self.alpha_scale / x.powf(self.alpha_exponent),
            beta: self.beta_scale / x.powf(self.beta_exponent),
            gamma: self.gamma_scale / x.powf(self.gamma_exponent),
        }
    }
}

pub fn schedule_at(schedule: &StepSchedule, t: u64) -> StepSizes {
    schedule.at(t)
}

/// Componentwise clamp of `x` into `[lo, hi]`.
pub fn project_box(x: &[f64], lo: &[f64], hi: &[f64]) -> Result<Vec<f64>> {
    if lo.len() != x.len() || hi.len() != x.len() {
        return Err(Error::shape("box bounds", x.len(), lo.len().min(hi.len())));
    }
    if let Some(i) = (0..x.len()).find(|&i| !(lo[i] <= hi[i])) {
        return Err(Error::config(format!("empty box at index {i}: [{}, {}]", lo[i], hi[i])));
    }
    Ok(x.iter().zip(lo).zip(hi).map(|((v, l), h)| v.clamp(*l, *h)).collect())
}
