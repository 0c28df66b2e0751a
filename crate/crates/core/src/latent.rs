//! Finite real arrays holding noisy latents.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest element count accepted for a latent.
pub const MAX_ELEMENTS: usize = 4096;

/// A rank-1 or rank-2 array of finite `f64` values in row-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawLatent", into = "RawLatent")]
pub struct Latent {
    shape: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawLatent {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl TryFrom<RawLatent> for Latent {
    type Error = Error;

    fn try_from(raw: RawLatent) -> Result<Self> {
        Latent::new(raw.shape, raw.values)
    }
}

impl From<Latent> for RawLatent {
    fn from(l: Latent) -> Self {
        RawLatent {
            shape: l.shape,
            values: l.values,
        }
    }
}

pub(crate) fn validate_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.len() > 2 {
        return Err(Error::invalid(format!(
            "latent rank must be 1 or 2, got {}",
            shape.len()
        )));
    }
    if shape.contains(&0) {
        return Err(Error::invalid("latent extents must be positive"));
    }
    let n: usize = shape.iter().product();
    if n > MAX_ELEMENTS {
        return Err(Error::invalid(format!(
            "latent has {n} elements, limit is {MAX_ELEMENTS}"
        )));
    }
    Ok(n)
}

impl Latent {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let n = validate_shape(&shape)?;
        if n != values.len() {
            return Err(Error::invalid(format!(
                "shape {shape:?} holds {n} elements but {} values were given",
                values.len()
            )));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Latent { shape, values })
    }

    /// Rank-1 latent from a vector.
    pub fn from_vec(values: Vec<f64>) -> Result<Self> {
        Latent::new(vec![values.len()], values)
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        let n = validate_shape(shape)?;
        Ok(Latent {
            shape: shape.to_vec(),
            values: vec![0.0; n],
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn ensure_shape(&self, expected: &[usize]) -> Result<()> {
        if self.shape != expected {
            return Err(Error::ShapeMismatch {
                expected: expected.to_vec(),
                actual: self.shape.clone(),
            });
        }
        Ok(())
    }

    /// Builds a latent of the same shape by mapping every element with its index.
    ///
    /// Fails if the mapping produces a non-finite value.
    pub fn map_indexed(&self, mut f: impl FnMut(usize, f64) -> f64) -> Result<Self> {
        let values: Vec<f64> = self.values.iter().enumerate().map(|(i, &v)| f(i, v)).collect();
        Latent::new(self.shape.clone(), values)
    }

    /// Elementwise `a * self + b * other`.
    pub fn affine(&self, a: f64, b: f64, other: &Latent) -> Result<Self> {
        other.ensure_shape(&self.shape)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&x, &e)| a * x + b * e)
            .collect();
        Latent::new(self.shape.clone(), values)
    }

    pub fn scale(&self, a: f64) -> Result<Self> {
        self.map_indexed(|_, v| a * v)
    }

    /// Largest absolute elementwise difference.
    pub fn max_abs_diff(&self, other: &Latent) -> Result<f64> {
        other.ensure_shape(&self.shape)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max))
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }

    /// Euclidean distance to `other`.
    pub fn distance(&self, other: &Latent) -> Result<f64> {
        other.ensure_shape(&self.shape)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt())
    }
}
