//! Dual-schedule inversion and sampling.
//!
//! Two interleaved grids are walked together. The primary grid
//! `P = [t0, t0 + s, ...]` carries the latents being inverted; the auxiliary
//! grid `A[j] = P[j] + δ` sits inside each primary interval. Every primary
//! step takes its noise from the auxiliary latent, and every auxiliary step
//! takes its noise from the primary latent:
//!
//! ```text
//! invert  z̄p[k]   = a(P[k−1]→P[k]) z̄p[k−1] + b ε(z̄a[k−1], A[k−1])
//!         z̄a[k]   = a(A[k−1]→A[k]) z̄a[k−1] + b ε(z̄p[k],   P[k])
//! sample  z̃p[k−1] = a(P[k]→P[k−1]) z̃p[k]   + b ε(z̃a[k−1], A[k−1])
//!         z̃a[k−2] = a(A[k−1]→A[k−2]) z̃a[k−1] + b ε(z̃p[k−1], P[k−1])
//! ```
//!
//! Each sampling step sees exactly the noise its inversion counterpart saw,
//! so with `a(u→v) a(v→u) = 1` and `b(u→v) = −a(u→v) b(v→u)` it undoes that
//! step. Only the last hop `P[0] → 0` is approximate, because `z0` is not
//! available at sampling time.

use serde::{Deserialize, Serialize};

use crate::ddim::{ddim_roundtrip, Direction, TimeGrid, Trajectory};
use crate::error::{Error, Result};
use crate::latent::Latent;
use crate::metrics::{MetricReport, DEFAULT_PEAK};
use crate::predictor::{guided_noise, GuidanceSpec, NoisePredictor};
use crate::schedule::DiffusionSchedule;

/// Primary grid plus the auxiliary offset `δ` (`0 < δ < s`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DualTimeGrid {
    primary: TimeGrid,
    aux_offset: usize,
}

/// Builds a dual grid with `δ = round(tau_fraction · s)` clamped to `[1, s − 1]`.
pub fn make_dual_grid(t0: usize, stride: usize, steps: usize, tau_fraction: f64) -> Result<DualTimeGrid> {
    if !(tau_fraction > 0.0 && tau_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "tau_fraction must lie in (0, 1), got {tau_fraction}"
        )));
    }
    if stride < 2 {
        return Err(Error::invalid("auxiliary offset needs a stride of at least 2"));
    }
    let delta = ((tau_fraction * stride as f64).round() as usize).clamp(1, stride - 1);
    DualTimeGrid::new(t0, stride, steps, delta)
}

impl DualTimeGrid {
    pub fn new(t0: usize, stride: usize, steps: usize, aux_offset: usize) -> Result<Self> {
        let primary = TimeGrid::new(t0, stride, steps)?;
        if aux_offset == 0 || aux_offset >= stride {
            return Err(Error::invalid(format!(
                "auxiliary offset {aux_offset} must lie strictly between 0 and stride {stride}"
            )));
        }
        Ok(DualTimeGrid { primary, aux_offset })
    }

    pub fn primary_grid(&self) -> &TimeGrid {
        &self.primary
    }

    pub fn t0(&self) -> usize {
        self.primary.t0
    }

    pub fn stride(&self) -> usize {
        self.primary.stride
    }

    /// Number of primary grid points, T′.
    pub fn steps(&self) -> usize {
        self.primary.steps
    }

    pub fn aux_offset(&self) -> usize {
        self.aux_offset
    }

    pub fn primary_time(&self, k: usize) -> usize {
        self.primary.time(k)
    }

    pub fn auxiliary_time(&self, j: usize) -> usize {
        self.primary.time(j) + self.aux_offset
    }

    /// `[t0, t0 + s, ..., t0 + (T′ − 1)·s]`.
    pub fn primary_times(&self) -> Vec<usize> {
        self.primary.times()
    }

    /// `[t0 + δ, ..., t0 + (T′ − 2)·s + δ]`, one point inside each primary
    /// interval. Empty when T′ = 1.
    pub fn auxiliary_times(&self) -> Vec<usize> {
        (0..self.steps() - 1).map(|j| self.auxiliary_time(j)).collect()
    }

    pub fn check(&self, schedule: &DiffusionSchedule) -> Result<()> {
        self.primary.check(schedule)?;
        schedule
            .check_time(self.auxiliary_time(0))
            .map_err(|_| Error::invalid("initial auxiliary time exceeds T"))
    }
}

/// Paired primary and auxiliary latents at grid index `k`.
///
/// The primary latent sits at `P[k]`, the auxiliary one at `A[k − 1]`
/// (or at `A[0]` when `k = 0`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualState {
    pub primary: Latent,
    pub aux: Latent,
    pub k: usize,
}

/// Primary and auxiliary trajectories of one pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualTrajectory {
    pub primary: Trajectory,
    pub auxiliary: Trajectory,
}

/// Both starting latents from `z0`, each by one DDIM inversion step from
/// `t = 0` with the noise evaluated at `z0`.
pub fn init_latents<P: NoisePredictor + ?Sized>(
    schedule: &DiffusionSchedule,
    grid: &DualTimeGrid,
    predictor: &P,
    guidance: &GuidanceSpec,
    z0: &Latent,
) -> Result<DualState> {
    grid.check(schedule)?;
    let p0 = grid.primary_time(0);
    let a0 = grid.auxiliary_time(0);
    let eps_p = guided_noise(predictor, z0, p0, guidance)?;
    let primary = schedule.coeffs(0, p0)?.apply(z0, &eps_p)?;
    let eps_a = guided_noise(predictor, z0, a0, guidance)?;
    let aux = schedule.coeffs(0, a0)?.apply(z0, &eps_a)?;
    Ok(DualState { primary, aux, k: 0 })
}

/// Dual-schedule inversion from `z0` to the top of the grid.
pub fn dual_invert<P: NoisePredictor + ?Sized>(
    schedule: &DiffusionSchedule,
    grid: &DualTimeGrid,
    predictor: &P,
    guidance: &GuidanceSpec,
    z0: &Latent,
) -> Result<(DualState, DualTrajectory)> {
    let DualState {
        mut primary, mut aux, ..
    } = init_latents(schedule, grid, predictor, guidance, z0)?;
    let mut primary_traj = Trajectory::new(Direction::Inversion);
    let mut aux_traj = Trajectory::new(Direction::Inversion);
    primary_traj.push(grid.primary_time(0), primary.clone())?;
    aux_traj.push(grid.auxiliary_time(0), aux.clone())?;

    let last = grid.steps() - 1;
    for k in 1..=last {
        let (p_prev, p_next) = (grid.primary_time(k - 1), grid.primary_time(k));
        let a_prev = grid.auxiliary_time(k - 1);
        let eps = guided_noise(predictor, &aux, a_prev, guidance)?;
        primary = schedule.coeffs(p_prev, p_next)?.apply(&primary, &eps)?;
        primary_traj.push(p_next, primary.clone())?;
        if k < last {
            let a_next = grid.auxiliary_time(k);
            let eps = guided_noise(predictor, &primary, p_next, guidance)?;
            aux = schedule.coeffs(a_prev, a_next)?.apply(&aux, &eps)?;
            aux_traj.push(a_next, aux.clone())?;
        }
    }
    Ok((
        DualState { primary, aux, k: last },
        DualTrajectory {
            primary: primary_traj,
            auxiliary: aux_traj,
        },
    ))
}

/// Dual-schedule sampling from the top pair back to data.
///
/// Returns the reconstruction and the sampling trajectories.
pub fn dual_sample<P: NoisePredictor + ?Sized>(
    schedule: &DiffusionSchedule,
    grid: &DualTimeGrid,
    predictor: &P,
    guidance: &GuidanceSpec,
    state_top: &DualState,
) -> Result<(Latent, DualTrajectory)> {
    grid.check(schedule)?;
    let last = grid.steps() - 1;
    if state_top.k != last {
        return Err(Error::invalid(format!(
            "sampling starts at grid index {last}, state is at {}",
            state_top.k
        )));
    }
    state_top.aux.ensure_shape(state_top.primary.shape())?;
    let mut primary = state_top.primary.clone();
    let mut aux = state_top.aux.clone();
    let mut primary_traj = Trajectory::new(Direction::Sampling);
    let mut aux_traj = Trajectory::new(Direction::Sampling);
    primary_traj.push(grid.primary_time(last), primary.clone())?;
    aux_traj.push(grid.auxiliary_time(last.saturating_sub(1)), aux.clone())?;

    for k in (1..=last).rev() {
        let (p_cur, p_next) = (grid.primary_time(k), grid.primary_time(k - 1));
        let a_cur = grid.auxiliary_time(k - 1);
        let eps = guided_noise(predictor, &aux, a_cur, guidance)?;
        primary = schedule.coeffs(p_cur, p_next)?.apply(&primary, &eps)?;
        primary_traj.push(p_next, primary.clone())?;
        if k >= 2 {
            let a_next = grid.auxiliary_time(k - 2);
            let eps = guided_noise(predictor, &primary, p_next, guidance)?;
            aux = schedule.coeffs(a_cur, a_next)?.apply(&aux, &eps)?;
            aux_traj.push(a_next, aux.clone())?;
        }
    }

    let t0 = grid.primary_time(0);
    let eps = guided_noise(predictor, &primary, t0, guidance)?;
    let z0_hat = schedule.coeffs(t0, 0)?.apply(&primary, &eps)?;
    Ok((
        z0_hat,
        DualTrajectory {
            primary: primary_traj,
            auxiliary: aux_traj,
        },
    ))
}

/// Outcome of a dual-schedule invert-then-sample round trip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTripReport {
    /// `(t, max |z̃_t − z̄_t|)` at every primary time, in ascending order.
    pub primary_gaps: Vec<(usize, f64)>,
    /// Same for the auxiliary times.
    pub auxiliary_gaps: Vec<(usize, f64)>,
    /// Largest absolute gap over all grid times.
    pub grid_gap: f64,
    /// `grid_gap` divided by the largest inversion-latent magnitude.
    pub grid_gap_relative: f64,
    /// Max-abs difference between `z0` and its reconstruction.
    pub z0_gap: f64,
    pub metrics: MetricReport,
    pub reconstruction: Latent,
}

fn grid_gaps(inverted: &Trajectory, sampled: &Trajectory) -> Result<(Vec<(usize, f64)>, f64)> {
    let mut gaps = Vec::with_capacity(inverted.len());
    let mut magnitude: f64 = 0.0;
    for entry in inverted.entries() {
        let other = sampled
            .latent_at(entry.t)
            .ok_or_else(|| Error::invalid(format!("sampling trajectory misses t = {}", entry.t)))?;
        gaps.push((entry.t, entry.latent.max_abs_diff(other)?));
        magnitude = magnitude.max(entry.latent.max_abs());
    }
    Ok((gaps, magnitude))
}

/// Runs [`dual_invert`] then [`dual_sample`] and compares the two passes.
pub fn dual_roundtrip<P: NoisePredictor + ?Sized>(
    schedule: &DiffusionSchedule,
    grid: &DualTimeGrid,
    predictor: &P,
    guidance: &GuidanceSpec,
    z0: &Latent,
) -> Result<RoundTripReport> {
    let (top, inverted) = dual_invert(schedule, grid, predictor, guidance, z0)?;
    let (reconstruction, sampled) = dual_sample(schedule, grid, predictor, guidance, &top)?;
    let (primary_gaps, mag_p) = grid_gaps(&inverted.primary, &sampled.primary)?;
    let (auxiliary_gaps, mag_a) = grid_gaps(&inverted.auxiliary, &sampled.auxiliary)?;
    let grid_gap = primary_gaps
        .iter()
        .chain(&auxiliary_gaps)
        .map(|&(_, g)| g)
        .fold(0.0, f64::max);
    let magnitude = mag_p.max(mag_a).max(f64::MIN_POSITIVE);
    Ok(RoundTripReport {
        primary_gaps,
        auxiliary_gaps,
        grid_gap,
        grid_gap_relative: grid_gap / magnitude,
        z0_gap: reconstruction.max_abs_diff(z0)?,
        metrics: MetricReport::compare(z0, &reconstruction, DEFAULT_PEAK)?,
        reconstruction,
    })
}

/// Inverts under the source prompt and samples under the target prompt.
pub fn edit_by_prompt_swap<P: NoisePredictor + ?Sized>(
    schedule: &DiffusionSchedule,
    grid: &DualTimeGrid,
    predictor: &P,
    guidance_src: &GuidanceSpec,
    guidance_tgt: &GuidanceSpec,
    z0: &Latent,
) -> Result<Latent> {
    let (top, _) = dual_invert(schedule, grid, predictor, guidance_src, z0)?;
    let (edited, _) = dual_sample(schedule, grid, predictor, guidance_tgt, &top)?;
    Ok(edited)
}

/// Reconstruction through the data-side hops alone: `0 → t0 → 0`.
///
/// This carries the same final-step error as a dual round trip and nothing
/// else, so it is the best reconstruction any grid traversal can reach.
pub fn endpoint_control<P: NoisePredictor + ?Sized>(
    schedule: &DiffusionSchedule,
    t0: usize,
    predictor: &P,
    guidance: &GuidanceSpec,
    z0: &Latent,
) -> Result<Latent> {
    let grid = TimeGrid::new(t0, 1, 1)?;
    ddim_roundtrip(schedule, &grid, predictor, guidance, z0)
}
