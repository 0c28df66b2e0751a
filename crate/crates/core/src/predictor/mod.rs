//! Noise predictors `ε(z, t, condition)` and classifier-free guidance.
//!
//! Every predictor here is deterministic: the same `(z, t, condition)` always
//! yields bitwise-identical output. Reversibility checks rely on that.

mod mixture;
mod procedural;
mod trace;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::Latent;

pub use mixture::{mixture_posterior_noise, responsibilities, GaussianMixture, MixtureComponent, MixturePredictor};
pub use procedural::ProceduralPredictor;
pub use trace::{
    record_trace, replay_trace, TraceEntry, TraceFile, TraceRecorder, TraceReplayer, TRACE_SCHEMA_VERSION,
};

/// Conditioning label handed to a predictor. `Unconditional` is the null slot
/// used by classifier-free guidance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "Option<u32>", into = "Option<u32>")]
pub enum Condition {
    Unconditional,
    Label(u32),
}

impl From<Option<u32>> for Condition {
    fn from(v: Option<u32>) -> Self {
        v.map_or(Condition::Unconditional, Condition::Label)
    }
}

impl From<Condition> for Option<u32> {
    fn from(c: Condition) -> Self {
        match c {
            Condition::Unconditional => None,
            Condition::Label(k) => Some(k),
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Condition::Unconditional => f.write_str("unconditional"),
            Condition::Label(k) => write!(f, "{k}"),
        }
    }
}

pub trait NoisePredictor: Send + Sync {
    /// Shape of latents this predictor accepts, if it is fixed.
    fn input_shape(&self) -> Option<&[usize]> {
        None
    }

    fn predict(&self, z: &Latent, t: usize, condition: Condition) -> Result<Latent>;
}

impl<P: NoisePredictor + ?Sized> NoisePredictor for &P {
    fn input_shape(&self) -> Option<&[usize]> {
        (**self).input_shape()
    }

    fn predict(&self, z: &Latent, t: usize, condition: Condition) -> Result<Latent> {
        (**self).predict(z, t, condition)
    }
}

impl<P: NoisePredictor + ?Sized> NoisePredictor for Box<P> {
    fn input_shape(&self) -> Option<&[usize]> {
        (**self).input_shape()
    }

    fn predict(&self, z: &Latent, t: usize, condition: Condition) -> Result<Latent> {
        (**self).predict(z, t, condition)
    }
}

impl<P: NoisePredictor + ?Sized> NoisePredictor for Arc<P> {
    fn input_shape(&self) -> Option<&[usize]> {
        (**self).input_shape()
    }

    fn predict(&self, z: &Latent, t: usize, condition: Condition) -> Result<Latent> {
        (**self).predict(z, t, condition)
    }
}

pub(crate) fn check_inputs(expected: Option<&[usize]>, z: &Latent, t: usize) -> Result<()> {
    if t == 0 {
        return Err(Error::invalid("noise prediction is undefined at t = 0"));
    }
    if let Some(shape) = expected {
        z.ensure_shape(shape)?;
    }
    Ok(())
}

/// Always predicts zero noise.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroPredictor;

impl NoisePredictor for ZeroPredictor {
    fn predict(&self, z: &Latent, t: usize, _condition: Condition) -> Result<Latent> {
        check_inputs(None, z, t)?;
        Latent::zeros(z.shape())
    }
}

/// Returns the same array for every query.
#[derive(Debug, Clone)]
pub struct ConstantPredictor {
    value: Latent,
}

impl ConstantPredictor {
    pub fn new(value: Latent) -> Self {
        ConstantPredictor { value }
    }
}

impl NoisePredictor for ConstantPredictor {
    fn input_shape(&self) -> Option<&[usize]> {
        Some(self.value.shape())
    }

    fn predict(&self, z: &Latent, t: usize, _condition: Condition) -> Result<Latent> {
        check_inputs(self.input_shape(), z, t)?;
        Ok(self.value.clone())
    }
}

/// Guidance scale `w` paired with the prompt condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuidanceSpec {
    pub scale: f64,
    pub condition: Condition,
}

impl GuidanceSpec {
    pub fn new(scale: f64, condition: Condition) -> Result<Self> {
        if !(scale.is_finite() && scale >= 0.0) {
            return Err(Error::invalid(format!(
                "guidance scale must be finite and >= 0, got {scale}"
            )));
        }
        Ok(GuidanceSpec { scale, condition })
    }

    /// `w = 1` with the given condition, i.e. no guidance.
    pub fn unguided(condition: Condition) -> Self {
        GuidanceSpec { scale: 1.0, condition }
    }
}

/// `w·eps_cond + (1 − w)·eps_uncond`, evaluated as `u + w·(c − u)`.
///
/// `w = 1` returns `eps_cond` and `w = 0` returns `eps_uncond` exactly, and
/// equal inputs come back unchanged for every `w`.
pub fn cfg_combine(eps_cond: &Latent, eps_uncond: &Latent, w: f64) -> Result<Latent> {
    eps_uncond.ensure_shape(eps_cond.shape())?;
    if w == 1.0 {
        return Ok(eps_cond.clone());
    }
    let values = eps_cond
        .values()
        .iter()
        .zip(eps_uncond.values())
        .map(|(&c, &u)| u + w * (c - u))
        .collect();
    Latent::new(eps_cond.shape().to_vec(), values)
}

/// Noise prediction under classifier-free guidance.
///
/// At `w = 1` only the conditional branch is queried.
pub fn guided_noise<P: NoisePredictor + ?Sized>(
    predictor: &P,
    z: &Latent,
    t: usize,
    guidance: &GuidanceSpec,
) -> Result<Latent> {
    let cond = predictor.predict(z, t, guidance.condition)?;
    if guidance.scale == 1.0 {
        return Ok(cond);
    }
    let uncond = predictor.predict(z, t, Condition::Unconditional)?;
    cfg_combine(&cond, &uncond, guidance.scale)
}

/// Wraps a predictor so that every query is guided at a fixed scale.
///
/// The condition passed to [`NoisePredictor::predict`] selects the
/// conditional branch; the unconditional branch is always the null slot.
#[derive(Debug, Clone)]
pub struct Guided<P> {
    inner: P,
    scale: f64,
}

impl<P: NoisePredictor> Guided<P> {
    pub fn new(inner: P, scale: f64) -> Result<Self> {
        GuidanceSpec::new(scale, Condition::Unconditional)?;
        Ok(Guided { inner, scale })
    }
}

impl<P: NoisePredictor> NoisePredictor for Guided<P> {
    fn input_shape(&self) -> Option<&[usize]> {
        self.inner.input_shape()
    }

    fn predict(&self, z: &Latent, t: usize, condition: Condition) -> Result<Latent> {
        guided_noise(
            &self.inner,
            z,
            t,
            &GuidanceSpec {
                scale: self.scale,
                condition,
            },
        )
    }
}
