//! Independent reference implementations used as test oracles.
//!
//! These deliberately avoid the library's step and coefficient helpers and
//! work on raw `Vec<f64>` with the `ᾱ` table read directly.
#![allow(dead_code)]

use dualsched::{Condition, GuidanceSpec, Latent, NoisePredictor};
use rand::Rng;

pub fn random_latent<R: Rng>(rng: &mut R, shape: &[usize], amplitude: f64) -> Latent {
    let n = shape.iter().product();
    Latent::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(-amplitude..amplitude)).collect(),
    )
    .unwrap()
}

fn coeff(ab: &[f64], from: usize, to: usize) -> (f64, f64) {
    let a = (ab[to] / ab[from]).sqrt();
    (a, (1.0 - ab[to]).sqrt() - a * (1.0 - ab[from]).sqrt())
}

fn step(ab: &[f64], from: usize, to: usize, z: &[f64], eps: &[f64]) -> Vec<f64> {
    let (a, b) = coeff(ab, from, to);
    z.iter().zip(eps).map(|(x, e)| a * x + b * e).collect()
}

fn noise(p: &dyn NoisePredictor, shape: &[usize], z: &[f64], t: usize, g: &GuidanceSpec) -> Vec<f64> {
    let zl = Latent::new(shape.to_vec(), z.to_vec()).unwrap();
    let c = p.predict(&zl, t, g.condition).unwrap().into_values();
    if g.scale == 1.0 {
        return c;
    }
    let u = p.predict(&zl, t, Condition::Unconditional).unwrap().into_values();
    c.iter().zip(&u).map(|(c, u)| u + g.scale * (c - u)).collect()
}

/// Hand-rolled DDIM inversion: returns the grid latents in ascending time.
pub fn ddim_invert_oracle(
    ab: &[f64],
    times: &[usize],
    p: &dyn NoisePredictor,
    g: &GuidanceSpec,
    z0: &Latent,
) -> Vec<Vec<f64>> {
    let shape = z0.shape();
    let mut out = Vec::new();
    let mut prev_t = 0;
    let mut z = z0.values().to_vec();
    for &t in times {
        let eps = noise(p, shape, &z, t, g);
        z = step(ab, prev_t, t, &z, &eps);
        out.push(z.clone());
        prev_t = t;
    }
    out
}

pub struct DualOracle {
    pub inv_primary: Vec<Vec<f64>>,
    pub inv_aux: Vec<Vec<f64>>,
    pub smp_primary: Vec<Vec<f64>>,
    pub smp_aux: Vec<Vec<f64>>,
    pub z0_hat: Vec<f64>,
}

/// Step-by-step dual-schedule inversion then sampling, indexed by grid
/// position (`inv_primary[k]` is at `P[k]`, `inv_aux[j]` at `A[j]`).
pub fn dual_oracle(
    ab: &[f64],
    primary: &[usize],
    delta: usize,
    p: &dyn NoisePredictor,
    g: &GuidanceSpec,
    z0: &Latent,
) -> DualOracle {
    let shape = z0.shape();
    let n = primary.len();
    let aux: Vec<usize> = primary.iter().map(|t| t + delta).collect();
    let x0 = z0.values().to_vec();

    let mut zp = vec![step(ab, 0, primary[0], &x0, &noise(p, shape, &x0, primary[0], g))];
    let mut za = vec![step(ab, 0, aux[0], &x0, &noise(p, shape, &x0, aux[0], g))];
    for k in 1..n {
        let e = noise(p, shape, &za[k - 1], aux[k - 1], g);
        let next = step(ab, primary[k - 1], primary[k], &zp[k - 1], &e);
        zp.push(next);
        if k + 1 < n {
            let e = noise(p, shape, &zp[k], primary[k], g);
            let next = step(ab, aux[k - 1], aux[k], &za[k - 1], &e);
            za.push(next);
        }
    }

    let mut sp = vec![Vec::new(); n];
    let mut sa = vec![Vec::new(); za.len()];
    sp[n - 1] = zp[n - 1].clone();
    sa[za.len() - 1] = za[za.len() - 1].clone();
    for k in (1..n).rev() {
        let e = noise(p, shape, &sa[k - 1], aux[k - 1], g);
        sp[k - 1] = step(ab, primary[k], primary[k - 1], &sp[k], &e);
        if k >= 2 {
            let e = noise(p, shape, &sp[k - 1], primary[k - 1], g);
            sa[k - 2] = step(ab, aux[k - 1], aux[k - 2], &sa[k - 1], &e);
        }
    }
    let e = noise(p, shape, &sp[0], primary[0], g);
    let z0_hat = step(ab, primary[0], 0, &sp[0], &e);
    DualOracle {
        inv_primary: zp,
        inv_aux: za,
        smp_primary: sp,
        smp_aux: sa,
        z0_hat,
    }
}

/// `E[ε | z_t]` for 1-D Gaussian-mixture data by composite Simpson
/// quadrature of the posterior over `x0`.
pub fn quadrature_posterior_noise(means: &[f64], variances: &[f64], weights: &[f64], alpha_bar: f64, z: f64) -> f64 {
    let (lo, hi, n) = (-6.0, 6.0, 240_000usize);
    let h = (hi - lo) / n as f64;
    let root = alpha_bar.sqrt();
    let noise_var = 1.0 - alpha_bar;
    let log_density = |x: f64| -> f64 {
        let prior: f64 = means
            .iter()
            .zip(variances)
            .zip(weights)
            .map(|((m, v), w)| w * (-(x - m) * (x - m) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt())
            .sum();
        prior.ln() - (z - root * x) * (z - root * x) / (2.0 * noise_var)
    };
    let logs: Vec<f64> = (0..=n).map(|i| log_density(lo + i as f64 * h)).collect();
    let peak = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (mut mass, mut first) = (0.0, 0.0);
    for (i, l) in logs.iter().enumerate() {
        let wgt = if i == 0 || i == n {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let d = (l - peak).exp();
        mass += wgt * d;
        first += wgt * d * (lo + i as f64 * h);
    }
    let posterior_mean = first / mass;
    (z - root * posterior_mean) / noise_var.sqrt()
}
