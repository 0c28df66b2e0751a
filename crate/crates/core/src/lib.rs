//! Exactly reversible inversion for DDIM-style diffusion samplers.
//!
//! DDIM inversion evaluates the noise predictor at the wrong latent, so
//! sampling from an inverted latent does not return the original data.
//! [`dual_schedule`] walks a primary and an auxiliary time grid in lockstep so
//! that every sampling step reuses the noise evaluation of its inversion
//! counterpart, which makes the pair exact inverses on the grid.
//!
//! The crate also carries the DDIM baseline ([`ddim`]), deterministic noise
//! predictors that stand in for a trained network ([`predictor`]), and the
//! reconstruction metrics used to compare them ([`metrics`]).
//!
//! ```
//! use dualsched::{
//!     dual_roundtrip, make_dual_grid, Condition, DiffusionSchedule, GuidanceSpec, Latent,
//!     ProceduralPredictor,
//! };
//!
//! let schedule = DiffusionSchedule::default();
//! let grid = make_dual_grid(1, 20, 50, 0.5)?;
//! let guidance = GuidanceSpec::new(7.5, Condition::Label(0))?;
//! let z0 = Latent::from_vec(vec![0.3, -0.7, 0.1, 0.9])?;
//!
//! let report = dual_roundtrip(&schedule, &grid, &ProceduralPredictor, &guidance, &z0)?;
//! assert!(report.grid_gap_relative < 1e-9);
//! # Ok::<(), dualsched::Error>(())
//! ```

pub mod ddim;
pub mod dual_schedule;
mod error;
mod latent;
pub mod metrics;
pub mod predictor;
pub mod schedule;

pub use crate::ddim::{
    ddim_invert_full, ddim_invert_step, ddim_roundtrip, ddim_roundtrip_gap, ddim_sample_full, ddim_sample_step,
    Direction, TimeGrid, Trajectory, TrajectoryEntry,
};
pub use crate::dual_schedule::{
    dual_invert, dual_roundtrip, dual_sample, edit_by_prompt_swap, endpoint_control, init_latents, make_dual_grid,
    DualState, DualTimeGrid, DualTrajectory, RoundTripReport,
};
pub use crate::error::{Error, Result};
pub use crate::latent::{Latent, MAX_ELEMENTS};
pub use crate::metrics::{mse, psnr, ssim, MetricReport};
pub use crate::predictor::{
    cfg_combine, guided_noise, mixture_posterior_noise, Condition, ConstantPredictor, GaussianMixture, GuidanceSpec,
    Guided, MixtureComponent, MixturePredictor, NoisePredictor, ProceduralPredictor, TraceFile, ZeroPredictor,
};
pub use crate::schedule::{make_schedule, DiffusionSchedule, ScheduleParams, TransitionCoeffs};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/schedule.md")]
    mod schedule {}
    #[doc = include_str!("../../../book/src/ddim.md")]
    mod ddim {}
    #[doc = include_str!("../../../book/src/dual-schedule.md")]
    mod dual_schedule {}
    #[doc = include_str!("../../../book/src/predictors.md")]
    mod predictors {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/editing.md")]
    mod editing {}
}
