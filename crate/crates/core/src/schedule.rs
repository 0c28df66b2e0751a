//! Cumulative signal-retention schedules and the affine transition
//! coefficients shared by every sampling and inversion step.
//!
//! A single step between time indices `u` and `v` moves a latent as
//! `z_v = a(u→v) z_u + b(u→v) ε`. The same formula serves both directions:
//! with `v < u` it is a denoising step, with `v > u` an inversion step.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Construction parameters for a scaled-linear β schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub total_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        ScheduleParams {
            total_steps: 1000,
            beta_start: 0.00085,
            beta_end: 0.012,
        }
    }
}

/// The sequence `ᾱ_t` for `t = 0..=T`, with `ᾱ_0 = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    alpha_bar: Vec<f64>,
}

/// Coefficients of the affine step `z_to = a z_from + b ε`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionCoeffs {
    pub a: f64,
    pub b: f64,
    pub t_from: usize,
    pub t_to: usize,
}

impl TransitionCoeffs {
    /// Applies `a * z + b * eps` elementwise.
    pub fn apply(&self, z: &crate::Latent, eps: &crate::Latent) -> Result<crate::Latent> {
        z.affine(self.a, self.b, eps)
    }
}

/// Scaled-linear schedule: `sqrt(β)` spaced linearly over `t = 1..=T`.
pub fn make_schedule(total_steps: usize, beta_start: f64, beta_end: f64) -> Result<DiffusionSchedule> {
    DiffusionSchedule::scaled_linear(ScheduleParams {
        total_steps,
        beta_start,
        beta_end,
    })
}

impl Default for DiffusionSchedule {
    fn default() -> Self {
        DiffusionSchedule::scaled_linear(ScheduleParams::default()).expect("default schedule parameters are valid")
    }
}

impl DiffusionSchedule {
    pub fn scaled_linear(params: ScheduleParams) -> Result<Self> {
        let ScheduleParams {
            total_steps,
            beta_start,
            beta_end,
        } = params;
        if total_steps < 2 {
            return Err(Error::invalid(format!(
                "total_steps must be at least 2, got {total_steps}"
            )));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::invalid(format!(
                "need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
            )));
        }
        let lo = beta_start.sqrt();
        let hi = beta_end.sqrt();
        let last = (total_steps - 1) as f64;
        let mut alpha_bar = Vec::with_capacity(total_steps + 1);
        alpha_bar.push(1.0);
        let mut acc = 1.0;
        for i in 0..total_steps {
            let root = lo + (hi - lo) * (i as f64) / last;
            acc *= 1.0 - root * root;
            if acc.is_nan() || acc <= 0.0 {
                return Err(Error::invalid(format!("alpha_bar underflows at t = {}", i + 1)));
            }
            alpha_bar.push(acc);
        }
        Ok(DiffusionSchedule { alpha_bar })
    }

    /// Wraps an explicit `ᾱ` table.
    ///
    /// Requires `ᾱ_0 = 1`, `0 < ᾱ_t < 1` for `t ≥ 1` and a non-increasing
    /// sequence. Plateaus are allowed so that identity transitions can be
    /// exercised in tests.
    pub fn from_alpha_bar(alpha_bar: Vec<f64>) -> Result<Self> {
        if alpha_bar.len() < 3 {
            return Err(Error::invalid("alpha_bar needs at least 3 entries"));
        }
        if alpha_bar[0] != 1.0 {
            return Err(Error::invalid("alpha_bar[0] must be exactly 1"));
        }
        for (t, w) in alpha_bar.windows(2).enumerate() {
            let next = w[1];
            if !(next > 0.0 && next < 1.0) {
                return Err(Error::invalid(format!("alpha_bar[{}] = {next} outside (0, 1)", t + 1)));
            }
            if next > w[0] {
                return Err(Error::invalid(format!("alpha_bar increases at t = {}", t + 1)));
            }
        }
        Ok(DiffusionSchedule { alpha_bar })
    }

    /// `T`, the largest valid time index.
    pub fn total_steps(&self) -> usize {
        self.alpha_bar.len() - 1
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.check_time(t)?;
        Ok(self.alpha_bar[t])
    }

    pub fn check_time(&self, t: usize) -> Result<()> {
        if t > self.total_steps() {
            return Err(Error::TimeOutOfRange {
                t,
                max: self.total_steps(),
            });
        }
        Ok(())
    }

    pub fn coeffs(&self, t_from: usize, t_to: usize) -> Result<TransitionCoeffs> {
        self.check_time(t_from)?;
        self.check_time(t_to)?;
        if t_from == t_to {
            return Err(Error::invalid(format!("transition {t_from} -> {t_to} is empty")));
        }
        let from = self.alpha_bar[t_from];
        let to = self.alpha_bar[t_to];
        let a = (to / from).sqrt();
        let b = (1.0 - to).sqrt() - a * (1.0 - from).sqrt();
        Ok(TransitionCoeffs { a, b, t_from, t_to })
    }
}
