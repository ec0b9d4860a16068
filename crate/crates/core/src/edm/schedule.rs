//! Polynomially-spaced noise ladder for sampling.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Ladder parameters. The defaults span [0.002, 80] over 18 levels with
/// warp exponent 7, which concentrates levels near the low-noise end.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub rho: f64,
    pub steps: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig { sigma_min: 0.002, sigma_max: 80.0, rho: 7.0, steps: 18 }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("schedule needs at least one level".into()));
        }
        if !(self.sigma_min > 0.0) || !self.sigma_min.is_finite() {
            return Err(Error::Config(format!("sigma_min {} must be positive", self.sigma_min)));
        }
        if !(self.sigma_max > self.sigma_min) || !self.sigma_max.is_finite() {
            return Err(Error::Config(format!(
                "sigma_max {} must exceed sigma_min {}",
                self.sigma_max, self.sigma_min
            )));
        }
        if !(self.rho > 0.0) || !self.rho.is_finite() {
            return Err(Error::Config(format!("rho {} must be positive", self.rho)));
        }
        Ok(())
    }
}

/// A strictly decreasing noise ladder from `sigma_max` down to `sigma_min`.
/// Level `i` of `n` is
///
/// ```text
/// sigma_i = (sigma_max^(1/rho) + i/(n-1) (sigma_min^(1/rho) - sigma_max^(1/rho)))^rho
/// ```
///
/// A single-level ladder holds just `sigma_max`; the sampler then takes one
/// plain Euler step to zero, whose result is exactly the denoiser's clean
/// estimate at that level.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaSchedule {
    sigmas: Vec<f64>,
}

impl SigmaSchedule {
    pub fn karras(cfg: &ScheduleConfig) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.steps;
        if n == 1 {
            return Ok(SigmaSchedule { sigmas: vec![cfg.sigma_max] });
        }
        let inv = 1.0 / cfg.rho;
        let hi = cfg.sigma_max.powf(inv);
        let lo = cfg.sigma_min.powf(inv);
        let sigmas = (0..n)
            .map(|i| {
                let f = i as f64 / (n - 1) as f64;
                (hi + f * (lo - hi)).powf(cfg.rho)
            })
            .collect();
        Ok(SigmaSchedule { sigmas })
    }

    /// Noise levels, strictly decreasing, without the terminal zero.
    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn sigma_max(&self) -> f64 {
        self.sigmas[0]
    }

    /// Consecutive `(from, to)` noise pairs, ending with `(sigma_min, 0)`.
    pub fn transitions(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        let n = self.sigmas.len();
        (0..n).map(move |i| {
            let next = if i + 1 < n { self.sigmas[i + 1] } else { 0.0 };
            (self.sigmas[i], next)
        })
    }
}
