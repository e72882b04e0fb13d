use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::math::{cos, sqrt};
use crate::{Error, Result};

/// Offset of the cosine schedule.
pub const COSINE_OFFSET: f64 = 0.008;
/// Largest per-step noise fraction `1 - ᾱ_t/ᾱ_{t-1}`. Only the final step
/// reaches it; without the cap `ᾱ_T` underflows to ~1e-33 and `Ŷ0` can no
/// longer be recovered from `Y_T`.
pub const MAX_BETA: f64 = 0.999;
/// Below this `ᾱ_t` is clamped before dividing by `√ᾱ_t`.
pub const MIN_ALPHA_BAR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub steps: usize,
    /// `ᾱ_t` for `t = 0..=T`.
    pub alpha_bar: Vec<f64>,
    /// `σ_t = √(1 - ᾱ_t)`.
    pub sigma: Vec<f64>,
}

impl NoiseSchedule {
    pub fn sqrt_alpha_bar(&self, t: usize) -> f64 {
        sqrt(self.alpha_bar[t].max(MIN_ALPHA_BAR))
    }

    fn check(&self, t: usize) -> Result<()> {
        if t > self.steps {
            return Err(Error::BadT(t));
        }
        Ok(())
    }
}

/// `ᾱ_t = f(t)/f(0)`, `f(t) = cos²(((t/T) + s)/(1 + s) · π/2)`.
pub fn cosine_schedule(steps: usize) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::BadT(0));
    }
    let f = |t: usize| {
        let x = (t as f64 / steps as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET) * core::f64::consts::FRAC_PI_2;
        let c = cos(x);
        c * c
    };
    let f0 = f(0);
    let mut alpha_bar: Vec<f64> = Vec::with_capacity(steps + 1);
    for t in 0..=steps {
        let mut a = f(t) / f0;
        if t > 0 {
            a = a.max(alpha_bar[t - 1] * (1.0 - MAX_BETA));
        }
        alpha_bar.push(a);
    }
    let sigma = alpha_bar.iter().map(|&a| sqrt(1.0 - a)).collect();
    Ok(NoiseSchedule {
        steps,
        alpha_bar,
        sigma,
    })
}

fn same_len(op: &'static str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch {
            op,
            detail: format!("{a} vs {b} entries"),
        });
    }
    Ok(())
}

/// `Y_t = √ᾱ_t·Y0 + σ_t·(E⊙M)`.
pub fn forward_noise(
    schedule: &NoiseSchedule,
    y0: &[f64],
    t: usize,
    noise: &[f64],
    mask: &[bool],
) -> Result<Vec<f64>> {
    schedule.check(t)?;
    same_len("forward_noise", y0.len(), noise.len())?;
    same_len("forward_noise", y0.len(), mask.len())?;
    let (a, s) = (sqrt(schedule.alpha_bar[t]), schedule.sigma[t]);
    Ok((0..y0.len())
        .map(|k| if mask[k] { a * y0[k] + s * noise[k] } else { 0.0 })
        .collect())
}

/// `Ŷ0 = (Y_t - σ_t·ε̂)/√ᾱ_t`.
pub fn reconstruct_y0(schedule: &NoiseSchedule, y_t: &[f64], eps_hat: &[f64], t: usize) -> Result<Vec<f64>> {
    schedule.check(t)?;
    same_len("reconstruct_y0", y_t.len(), eps_hat.len())?;
    let (a, s) = (schedule.sqrt_alpha_bar(t), schedule.sigma[t]);
    Ok(y_t.iter().zip(eps_hat).map(|(&y, &e)| (y - s * e) / a).collect())
}
