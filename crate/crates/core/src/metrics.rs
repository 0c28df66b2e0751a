//! Reconstruction metrics: MSE, PSNR, SSIM and max-abs gap.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::Latent;

/// PSNR reported for identical inputs, and the ceiling for everything else.
pub const PSNR_CAP_DB: f64 = 300.0;

/// Peak-to-peak range of latents normalised to `[−1, 1]`.
pub const DEFAULT_PEAK: f64 = 2.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

pub fn mse(x: &Latent, y: &Latent) -> Result<f64> {
    y.ensure_shape(x.shape())?;
    let sum: f64 = x.values().iter().zip(y.values()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sum / x.len() as f64)
}

/// Converts an MSE to decibels, capped at [`PSNR_CAP_DB`].
pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        return PSNR_CAP_DB;
    }
    (10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB)
}

pub fn psnr(x: &Latent, y: &Latent, peak: f64) -> Result<f64> {
    if !(peak.is_finite() && peak > 0.0) {
        return Err(Error::invalid(format!("PSNR peak must be positive, got {peak}")));
    }
    Ok(psnr_from_mse(mse(x, y)?, peak))
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let centre = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - centre;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

/// Valid-mode separable filtering of a `rows × cols` image.
fn filter_valid(img: &[f64], rows: usize, cols: usize, w: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let out_c = cols - SSIM_WINDOW + 1;
    let out_r = rows - SSIM_WINDOW + 1;
    let mut horiz = vec![0.0; rows * out_c];
    for r in 0..rows {
        for c in 0..out_c {
            horiz[r * out_c + c] = w.iter().enumerate().map(|(k, wk)| wk * img[r * cols + c + k]).sum();
        }
    }
    let mut out = vec![0.0; out_r * out_c];
    for r in 0..out_r {
        for c in 0..out_c {
            out[r * out_c + c] = w
                .iter()
                .enumerate()
                .map(|(k, wk)| wk * horiz[(r + k) * out_c + c])
                .sum();
        }
    }
    out
}

/// Mean SSIM over all valid 11×11 Gaussian windows (σ = 1.5, K1 = 0.01,
/// K2 = 0.03).
pub fn ssim(x: &Latent, y: &Latent, dynamic_range: f64) -> Result<f64> {
    y.ensure_shape(x.shape())?;
    let &[rows, cols] = x.shape() else {
        return Err(Error::InputTooSmall(format!(
            "SSIM needs a rank-2 latent, got shape {:?}",
            x.shape()
        )));
    };
    if rows < SSIM_WINDOW || cols < SSIM_WINDOW {
        return Err(Error::InputTooSmall(format!(
            "SSIM needs both extents >= {SSIM_WINDOW}, got {rows}x{cols}"
        )));
    }
    if !(dynamic_range.is_finite() && dynamic_range > 0.0) {
        return Err(Error::invalid("SSIM dynamic range must be positive"));
    }
    let w = gaussian_window();
    let xs = x.values();
    let ys = y.values();
    let prod = |f: fn(f64, f64) -> f64| -> Vec<f64> { xs.iter().zip(ys).map(|(&a, &b)| f(a, b)).collect() };
    let mu_x = filter_valid(xs, rows, cols, &w);
    let mu_y = filter_valid(ys, rows, cols, &w);
    let xx = filter_valid(&prod(|a, _| a * a), rows, cols, &w);
    let yy = filter_valid(&prod(|_, b| b * b), rows, cols, &w);
    let xy = filter_valid(&prod(|a, b| a * b), rows, cols, &w);
    let c1 = (SSIM_K1 * dynamic_range).powi(2);
    let c2 = (SSIM_K2 * dynamic_range).powi(2);
    let total: f64 = (0..mu_x.len())
        .map(|i| {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let vx = xx[i] - mx * mx;
            let vy = yy[i] - my * my;
            let cov = xy[i] - mx * my;
            ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / mu_x.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mse: f64,
    pub psnr_db: f64,
    /// Present for rank-2 inputs at least 11×11.
    pub ssim: Option<f64>,
    pub max_abs_gap: f64,
}

impl MetricReport {
    /// Compares a reconstruction against its reference. `peak` serves as
    /// both the PSNR peak and the SSIM dynamic range.
    pub fn compare(reference: &Latent, reconstruction: &Latent, peak: f64) -> Result<Self> {
        let mse = mse(reference, reconstruction)?;
        let psnr_db = psnr(reference, reconstruction, peak)?;
        let ssim = match reference.shape() {
            &[r, c] if r >= SSIM_WINDOW && c >= SSIM_WINDOW => Some(ssim(reference, reconstruction, peak)?),
            _ => None,
        };
        Ok(MetricReport {
            mse,
            psnr_db,
            ssim,
            max_abs_gap: reference.max_abs_diff(reconstruction)?,
        })
    }
}
