//! Baseline DDIM sampling and approximate DDIM inversion on a strided grid.
//!
//! Inversion evaluates the noise at the *previous* latent, `ε(z_{t−s}, t)`,
//! because the latent at `t` is not known yet. Sampling evaluates it at the
//! current latent, `ε(z_t, t)`. The two steps are exact inverses only when
//! both see the same `ε`, so for a `z`-dependent predictor the round trip
//! does not close.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::Latent;
use crate::predictor::{guided_noise, GuidanceSpec, NoisePredictor};
use crate::schedule::DiffusionSchedule;

/// The grid `[t0, t0 + s, ..., t0 + (T′ − 1)·s]`.
///
/// `steps` (T′) counts grid points, which is also the number of noise
/// evaluations a sampling pass makes: `t0 = 1, s = 20, T′ = 50` is
/// `[1, 21, ..., 981]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t0: usize,
    pub stride: usize,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(t0: usize, stride: usize, steps: usize) -> Result<Self> {
        if t0 == 0 {
            return Err(Error::invalid("grid start t0 must be at least 1"));
        }
        if stride == 0 || steps == 0 {
            return Err(Error::invalid("grid stride and steps must be at least 1"));
        }
        t0.checked_add(
            stride
                .checked_mul(steps - 1)
                .ok_or_else(|| Error::invalid("grid overflows"))?,
        )
        .ok_or_else(|| Error::invalid("grid overflows"))?;
        Ok(TimeGrid { t0, stride, steps })
    }

    /// Last (largest) grid time.
    pub fn top(&self) -> usize {
        self.t0 + (self.steps - 1) * self.stride
    }

    pub fn time(&self, k: usize) -> usize {
        self.t0 + k * self.stride
    }

    pub fn times(&self) -> Vec<usize> {
        (0..self.steps).map(|k| self.time(k)).collect()
    }

    pub fn check(&self, schedule: &DiffusionSchedule) -> Result<()> {
        if self.top() > schedule.total_steps() {
            return Err(Error::invalid(format!(
                "grid top {} exceeds T = {}",
                self.top(),
                schedule.total_steps()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Inversion,
    Sampling,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryEntry {
    pub t: usize,
    pub latent: Latent,
}

/// Ordered `(t, z_t)` record of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    direction: Direction,
    entries: Vec<TrajectoryEntry>,
}

impl Trajectory {
    pub fn new(direction: Direction) -> Self {
        Trajectory {
            direction,
            entries: Vec::new(),
        }
    }

    /// Appends an entry; times must move in the trajectory's direction.
    pub fn push(&mut self, t: usize, latent: Latent) -> Result<()> {
        if let Some(last) = self.entries.last() {
            let ordered = match self.direction {
                Direction::Inversion => t > last.t,
                Direction::Sampling => t < last.t,
            };
            if !ordered {
                return Err(Error::invalid(format!(
                    "time {t} out of order after {} in {:?} trajectory",
                    last.t, self.direction
                )));
            }
            latent.ensure_shape(last.latent.shape())?;
        }
        self.entries.push(TrajectoryEntry { t, latent });
        Ok(())
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn entries(&self) -> &[TrajectoryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn times(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.t).collect()
    }

    pub fn last(&self) -> Option<&TrajectoryEntry> {
        self.entries.last()
    }

    pub fn latent_at(&self, t: usize) -> Option<&Latent> {
        self.entries.iter().find(|e| e.t == t).map(|e| &e.latent)
    }
}

/// One denoising step `z_{t−s} = a(t→t−s) z_t + b(t→t−s) ε`.
pub fn ddim_sample_step(
    schedule: &DiffusionSchedule,
    z_t: &Latent,
    t: usize,
    s: usize,
    eps: &Latent,
) -> Result<Latent> {
    let to = t
        .checked_sub(s)
        .ok_or_else(|| Error::invalid(format!("sampling step {t} - {s} underflows")))?;
    schedule.coeffs(t, to)?.apply(z_t, eps)
}

/// One inversion step `z_t = a(t−s→t) z_{t−s} + b(t−s→t) ε`, where `ε` was
/// evaluated at `z_{t−s}`.
pub fn ddim_invert_step(
    schedule: &DiffusionSchedule,
    z_prev: &Latent,
    t: usize,
    s: usize,
    eps_at_prev: &Latent,
) -> Result<Latent> {
    let from = t
        .checked_sub(s)
        .ok_or_else(|| Error::invalid(format!("inversion step {t} - {s} underflows")))?;
    schedule.coeffs(from, t)?.apply(z_prev, eps_at_prev)
}

/// DDIM inversion from data up the grid.
///
/// The first step maps `z0` (at `t = 0`) to `t0` with `ε(z0, t0)`. The
/// returned trajectory holds the `T′` grid latents, ending at the top.
pub fn ddim_invert_full<P: NoisePredictor + ?Sized>(
    schedule: &DiffusionSchedule,
    grid: &TimeGrid,
    predictor: &P,
    guidance: &GuidanceSpec,
    z0: &Latent,
) -> Result<Trajectory> {
    grid.check(schedule)?;
    let mut trajectory = Trajectory::new(Direction::Inversion);
    let eps = guided_noise(predictor, z0, grid.t0, guidance)?;
    let mut z = ddim_invert_step(schedule, z0, grid.t0, grid.t0, &eps)?;
    trajectory.push(grid.t0, z.clone())?;
    for k in 1..grid.steps {
        let t = grid.time(k);
        let eps = guided_noise(predictor, &z, t, guidance)?;
        z = ddim_invert_step(schedule, &z, t, grid.stride, &eps)?;
        trajectory.push(t, z.clone())?;
    }
    Ok(trajectory)
}

/// DDIM sampling from the grid top down to data.
///
/// Returns the reconstructed `z0` and the `T′` grid latents in
/// descending time order.
pub fn ddim_sample_full<P: NoisePredictor + ?Sized>(
    schedule: &DiffusionSchedule,
    grid: &TimeGrid,
    predictor: &P,
    guidance: &GuidanceSpec,
    z_top: &Latent,
) -> Result<(Latent, Trajectory)> {
    grid.check(schedule)?;
    let mut trajectory = Trajectory::new(Direction::Sampling);
    let mut z = z_top.clone();
    trajectory.push(grid.top(), z.clone())?;
    for k in (1..grid.steps).rev() {
        let t = grid.time(k);
        let eps = guided_noise(predictor, &z, t, guidance)?;
        z = ddim_sample_step(schedule, &z, t, grid.stride, &eps)?;
        trajectory.push(t - grid.stride, z.clone())?;
    }
    let eps = guided_noise(predictor, &z, grid.t0, guidance)?;
    let z0 = ddim_sample_step(schedule, &z, grid.t0, grid.t0, &eps)?;
    Ok((z0, trajectory))
}

/// Reconstruction from a DDIM invert-then-sample round trip.
pub fn ddim_roundtrip<P: NoisePredictor + ?Sized>(
    schedule: &DiffusionSchedule,
    grid: &TimeGrid,
    predictor: &P,
    guidance: &GuidanceSpec,
    z0: &Latent,
) -> Result<Latent> {
    let inverted = ddim_invert_full(schedule, grid, predictor, guidance, z0)?;
    let top = &inverted.last().expect("inversion trajectory is never empty").latent;
    let (z0_hat, _) = ddim_sample_full(schedule, grid, predictor, guidance, top)?;
    Ok(z0_hat)
}

/// Max-abs difference between `z0` and its DDIM round-trip reconstruction.
pub fn ddim_roundtrip_gap<P: NoisePredictor + ?Sized>(
    schedule: &DiffusionSchedule,
    grid: &TimeGrid,
    predictor: &P,
    guidance: &GuidanceSpec,
    z0: &Latent,
) -> Result<f64> {
    ddim_roundtrip(schedule, grid, predictor, guidance, z0)?.max_abs_diff(z0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::{Condition, ProceduralPredictor, ZeroPredictor};
    use proptest::prelude::*;

    fn latent(n: usize, seed: f64) -> Latent {
        Latent::from_vec((0..n).map(|i| ((i as f64 + seed) * 1.7).sin()).collect()).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(TimeGrid::new(0, 20, 50).is_err());
        assert!(TimeGrid::new(1, 0, 50).is_err());
        assert!(TimeGrid::new(1, 20, 0).is_err());
        let g = TimeGrid::new(1, 20, 51).unwrap();
        assert_eq!(g.top(), 1001);
        assert!(g.check(&DiffusionSchedule::default()).is_err());
        let g = TimeGrid::new(1, 20, 50).unwrap();
        assert_eq!(g.times().len(), 50);
        assert_eq!(g.times()[..3], [1, 21, 41]);
        assert_eq!(*g.times().last().unwrap(), 981);
    }

    #[test]
    fn trajectory_ordering() {
        let mut t = Trajectory::new(Direction::Sampling);
        t.push(10, latent(2, 0.0)).unwrap();
        assert!(t.push(10, latent(2, 0.0)).is_err());
        assert!(t.push(5, latent(3, 0.0)).is_err());
        t.push(5, latent(2, 1.0)).unwrap();
        assert_eq!(t.times(), vec![10, 5]);
    }

    #[test]
    fn step_errors() {
        let s = DiffusionSchedule::default();
        let z = latent(3, 0.0);
        assert!(ddim_sample_step(&s, &z, 5, 6, &z).is_err());
        assert!(ddim_invert_step(&s, &z, 1001, 20, &z).is_err());
        assert!(ddim_sample_step(&s, &z, 40, 20, &latent(2, 0.0)).is_err());
    }

    #[test]
    fn zero_noise_rescales() {
        let s = DiffusionSchedule::default();
        let z = latent(4, 0.3);
        let zero = Latent::zeros(&[4]).unwrap();
        let down = ddim_sample_step(&s, &z, 400, 20, &zero).unwrap();
        let a = (s.alpha_bar(380).unwrap() / s.alpha_bar(400).unwrap()).sqrt();
        assert_eq!(down, z.scale(a).unwrap());
        let up = ddim_invert_step(&s, &z, 400, 20, &zero).unwrap();
        let a = (s.alpha_bar(400).unwrap() / s.alpha_bar(380).unwrap()).sqrt();
        assert_eq!(up, z.scale(a).unwrap());
    }

    #[test]
    fn plateau_is_identity() {
        let s = DiffusionSchedule::from_alpha_bar(vec![1.0, 0.7, 0.7, 0.3]).unwrap();
        let z = latent(3, 2.0);
        let e = latent(3, 5.0);
        assert_eq!(ddim_sample_step(&s, &z, 2, 1, &e).unwrap(), z);
    }

    #[test]
    fn sample_step_matches_original_form() {
        let s = DiffusionSchedule::default();
        let z = latent(8, 1.1);
        let e = latent(8, 4.2);
        let (t, prev) = (521, 501);
        let got = ddim_sample_step(&s, &z, t, 20, &e).unwrap();
        let at = s.alpha_bar(t).unwrap();
        let ap = s.alpha_bar(prev).unwrap();
        for i in 0..8 {
            let (zi, ei) = (z.values()[i], e.values()[i]);
            let direct = ap.sqrt() * (zi - (1.0 - at).sqrt() * ei) / at.sqrt() + (1.0 - ap).sqrt() * ei;
            assert!((got.values()[i] - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn reevaluated_noise_does_not_close() {
        let s = DiffusionSchedule::default();
        let p = ProceduralPredictor;
        let z = latent(16, 0.5);
        let (t, stride) = (301, 20);
        let e_prev = p.predict(&z, t, Condition::Label(0)).unwrap();
        let up = ddim_invert_step(&s, &z, t, stride, &e_prev).unwrap();
        let e_new = p.predict(&up, t, Condition::Label(0)).unwrap();
        let back = ddim_sample_step(&s, &up, t, stride, &e_new).unwrap();
        assert!(back.max_abs_diff(&z).unwrap() > 1e-6);
    }

    #[test]
    fn zero_predictor_full_runs() {
        let s = DiffusionSchedule::default();
        let g = TimeGrid::new(1, 20, 50).unwrap();
        let z0 = latent(5, 0.0);
        let guide = GuidanceSpec::unguided(Condition::Unconditional);
        let inv = ddim_invert_full(&s, &g, &ZeroPredictor, &guide, &z0).unwrap();
        assert_eq!(inv.len(), 50);
        let top = &inv.last().unwrap().latent;
        let expect = z0.scale(s.alpha_bar(981).unwrap().sqrt()).unwrap();
        assert!(top.max_abs_diff(&expect).unwrap() < 1e-12);
        let (rec, samp) = ddim_sample_full(&s, &g, &ZeroPredictor, &guide, &expect).unwrap();
        assert_eq!(samp.len(), inv.len());
        assert!(rec.max_abs_diff(&z0).unwrap() < 1e-10);
        assert!(ddim_roundtrip_gap(&s, &g, &ZeroPredictor, &guide, &z0).unwrap() <= 1e-10);
    }

    #[test]
    fn single_step_grid() {
        let s = DiffusionSchedule::default();
        let g = TimeGrid::new(1, 20, 2).unwrap();
        let guide = GuidanceSpec::unguided(Condition::Label(0));
        let inv = ddim_invert_full(&s, &g, &ProceduralPredictor, &guide, &latent(3, 0.0)).unwrap();
        assert_eq!(inv.times(), vec![1, 21]);
    }

    #[test]
    fn procedural_gap_dominates_constant() {
        let s = DiffusionSchedule::default();
        let g = TimeGrid::new(1, 20, 50).unwrap();
        let z0 = latent(16, 0.0);
        let guide = GuidanceSpec::unguided(Condition::Label(0));
        let zero_gap = ddim_roundtrip_gap(&s, &g, &ZeroPredictor, &guide, &z0).unwrap();
        let gap = ddim_roundtrip_gap(&s, &g, &ProceduralPredictor, &guide, &z0).unwrap();
        assert!(gap > 0.0);
        assert!(gap > 10.0 * zero_gap);
    }

    proptest! {
        #[test]
        fn shared_noise_reciprocity(
            xs in proptest::collection::vec(-3.0f64..3.0, 4),
            es in proptest::collection::vec(-3.0f64..3.0, 4),
            t in 2usize..=1000,
            s in 1usize..1000,
        ) {
            prop_assume!(s <= t);
            let sched = DiffusionSchedule::default();
            let z = Latent::from_vec(xs).unwrap();
            let e = Latent::from_vec(es).unwrap();
            let up = ddim_invert_step(&sched, &z, t, s, &e).unwrap();
            let back = ddim_sample_step(&sched, &up, t, s, &e).unwrap();
            let scale = (z.max_abs() + e.max_abs()) * (1.0 + up.max_abs());
            prop_assert!(back.max_abs_diff(&z).unwrap() <= 1e-12 * scale.max(1.0));
        }
    }
}
