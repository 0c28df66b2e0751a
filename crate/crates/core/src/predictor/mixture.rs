//! Bayes-optimal noise prediction for Gaussian-mixture data.
//!
//! Each component is `N(μ_k, σ_k² I)`. Under `z_t = sqrt(ᾱ) x + sqrt(1 − ᾱ) ε`
//! the noisy marginal of component `k` is `N(sqrt(ᾱ) μ_k, v_k I)` with
//! `v_k = ᾱ σ_k² + 1 − ᾱ`, and the posterior noise mean is
//! `E[ε | z, k] = sqrt(1 − ᾱ) (z − sqrt(ᾱ) μ_k) / v_k`. The unconditional
//! prediction mixes these with the posterior responsibilities.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, WeightedIndex};

use crate::error::{Error, Result};
use crate::latent::{validate_shape, Latent};
use crate::schedule::DiffusionSchedule;

use super::{check_inputs, Condition, NoisePredictor};

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureComponent {
    pub mean: Latent,
    /// Isotropic data variance `σ²`.
    pub variance: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    components: Vec<MixtureComponent>,
}

impl GaussianMixture {
    pub fn new(components: Vec<MixtureComponent>) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| Error::invalid("mixture needs at least one component"))?;
        let shape = first.mean.shape().to_vec();
        for (k, c) in components.iter().enumerate() {
            c.mean.ensure_shape(&shape)?;
            if !(c.variance.is_finite() && c.variance > 0.0) {
                return Err(Error::invalid(format!("component {k} variance must be positive")));
            }
            if !(c.weight.is_finite() && c.weight > 0.0) {
                return Err(Error::invalid(format!("component {k} weight must be positive")));
            }
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("mixture weights sum to {total}, not 1")));
        }
        Ok(GaussianMixture { components })
    }

    /// Equal-weight mixture sharing one variance.
    pub fn uniform(means: Vec<Latent>, variance: f64) -> Result<Self> {
        let k = means.len() as f64;
        Self::new(
            means
                .into_iter()
                .map(|mean| MixtureComponent {
                    mean,
                    variance,
                    weight: 1.0 / k,
                })
                .collect(),
        )
    }

    /// Equal-weight mixture whose means have entries drawn uniformly from
    /// `[−spread, spread]`.
    pub fn random<R: Rng + ?Sized>(
        shape: &[usize],
        components: usize,
        variance: f64,
        spread: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let n = validate_shape(shape)?;
        if components == 0 {
            return Err(Error::invalid("mixture needs at least one component"));
        }
        if !(spread.is_finite() && spread >= 0.0) {
            return Err(Error::invalid("mean spread must be finite and non-negative"));
        }
        let means = (0..components)
            .map(|_| {
                let values = (0..n).map(|_| rng.gen_range(-spread..=spread)).collect();
                Latent::new(shape.to_vec(), values)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::uniform(means, variance)
    }

    pub fn shape(&self) -> &[usize] {
        self.components[0].mean.shape()
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn components(&self) -> &[MixtureComponent] {
        &self.components
    }

    pub fn component(&self, condition: Condition) -> Result<&MixtureComponent> {
        match condition {
            Condition::Label(k) => self
                .components
                .get(k as usize)
                .ok_or_else(|| Error::UnknownCondition(format!("label {k} with {} components", self.len()))),
            Condition::Unconditional => Err(Error::UnknownCondition("unconditional has no single component".into())),
        }
    }

    /// Mean of the component for a label, or the mixture mean.
    pub fn mean(&self, condition: Condition) -> Result<Latent> {
        if let Condition::Label(_) = condition {
            return Ok(self.component(condition)?.mean.clone());
        }
        let n = self.components[0].mean.len();
        let mut acc = vec![0.0; n];
        for c in &self.components {
            for (a, m) in acc.iter_mut().zip(c.mean.values()) {
                *a += c.weight * m;
            }
        }
        Latent::new(self.shape().to_vec(), acc)
    }

    /// Draws a data sample from one component, or from the whole mixture.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, condition: Condition) -> Result<Latent> {
        let component = match condition {
            Condition::Label(_) => self.component(condition)?,
            Condition::Unconditional => {
                let index = WeightedIndex::new(self.components.iter().map(|c| c.weight))
                    .map_err(|e| Error::invalid(e.to_string()))?;
                &self.components[index.sample(rng)]
            }
        };
        let sd = component.variance.sqrt();
        component.mean.map_indexed(|_, m| {
            let n: f64 = StandardNormal.sample(rng);
            m + sd * n
        })
    }
}

fn noise_level(schedule: &DiffusionSchedule, t: usize) -> Result<(f64, f64)> {
    if t == 0 {
        return Err(Error::invalid("noise prediction is undefined at t = 0"));
    }
    let ab = schedule.alpha_bar(t)?;
    Ok((ab.sqrt(), 1.0 - ab))
}

/// Posterior probabilities `p(k | z_t)` of each component.
///
/// Computed from log-densities with the maximum subtracted before
/// exponentiating.
pub fn responsibilities(gmm: &GaussianMixture, schedule: &DiffusionSchedule, z: &Latent, t: usize) -> Result<Vec<f64>> {
    z.ensure_shape(gmm.shape())?;
    let (root_ab, one_minus) = noise_level(schedule, t)?;
    let ab = root_ab * root_ab;
    let d = z.len() as f64;
    let mut logs = Vec::with_capacity(gmm.len());
    for c in gmm.components() {
        let var = ab * c.variance + one_minus;
        if var.is_nan() || var <= 0.0 {
            return Err(Error::DegenerateCovariance { t });
        }
        let sq: f64 = z
            .values()
            .iter()
            .zip(c.mean.values())
            .map(|(&x, &m)| {
                let r = x - root_ab * m;
                r * r
            })
            .sum();
        logs.push(c.weight.ln() - 0.5 * d * var.ln() - sq / (2.0 * var));
    }
    Ok(normalize_log_weights(&logs))
}

pub(crate) fn normalize_log_weights(logs: &[f64]) -> Vec<f64> {
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Exact `E[ε | z_t]` for Gaussian-mixture data.
///
/// A label restricts the posterior to that component; `Unconditional`
/// marginalises over all of them.
pub fn mixture_posterior_noise(
    gmm: &GaussianMixture,
    schedule: &DiffusionSchedule,
    z: &Latent,
    t: usize,
    condition: Condition,
) -> Result<Latent> {
    z.ensure_shape(gmm.shape())?;
    let (root_ab, one_minus) = noise_level(schedule, t)?;
    let ab = root_ab * root_ab;
    let weights: Vec<(f64, &MixtureComponent)> = match condition {
        Condition::Label(_) => vec![(1.0, gmm.component(condition)?)],
        Condition::Unconditional => responsibilities(gmm, schedule, z, t)?
            .into_iter()
            .zip(gmm.components())
            .collect(),
    };
    let root_one_minus = one_minus.sqrt();
    let mut eps = vec![0.0; z.len()];
    for (r, c) in weights {
        let var = ab * c.variance + one_minus;
        if var.is_nan() || var <= 0.0 {
            return Err(Error::DegenerateCovariance { t });
        }
        let gain = r * root_one_minus / var;
        for ((e, &x), &m) in eps.iter_mut().zip(z.values()).zip(c.mean.values()) {
            *e += gain * (x - root_ab * m);
        }
    }
    Latent::new(z.shape().to_vec(), eps)
}

/// [`NoisePredictor`] backed by [`mixture_posterior_noise`].
#[derive(Debug, Clone)]
pub struct MixturePredictor {
    gmm: GaussianMixture,
    schedule: DiffusionSchedule,
}

impl MixturePredictor {
    pub fn new(gmm: GaussianMixture, schedule: DiffusionSchedule) -> Self {
        MixturePredictor { gmm, schedule }
    }

    pub fn mixture(&self) -> &GaussianMixture {
        &self.gmm
    }

    pub fn schedule(&self) -> &DiffusionSchedule {
        &self.schedule
    }
}

impl NoisePredictor for MixturePredictor {
    fn input_shape(&self) -> Option<&[usize]> {
        Some(self.gmm.shape())
    }

    fn predict(&self, z: &Latent, t: usize, condition: Condition) -> Result<Latent> {
        check_inputs(self.input_shape(), z, t)?;
        mixture_posterior_noise(&self.gmm, &self.schedule, z, t, condition)
    }
}
