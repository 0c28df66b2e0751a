use crate::error::Result;
use crate::latent::Latent;

use super::{check_inputs, Condition, NoisePredictor};

/// Smooth synthetic predictor for stress-testing reversibility.
///
/// `ε[i] = tanh(0.3·z[i] + 0.1·sin(0.01·t + i + 17·c))`, where `c` is the
/// label index and `−1` for the unconditional slot. It depends on `z`, so
/// DDIM's `z_{t−s} ≈ z_t` substitution produces a visible error.
#[derive(Debug, Clone, Copy, Default)]
pub struct ProceduralPredictor;

impl ProceduralPredictor {
    fn condition_index(condition: Condition) -> f64 {
        match condition {
            Condition::Unconditional => -1.0,
            Condition::Label(k) => f64::from(k),
        }
    }
}

impl NoisePredictor for ProceduralPredictor {
    fn predict(&self, z: &Latent, t: usize, condition: Condition) -> Result<Latent> {
        check_inputs(None, z, t)?;
        let c = Self::condition_index(condition);
        let phase = 0.01 * t as f64;
        z.map_indexed(|i, v| (0.3 * v + 0.1 * (phase + i as f64 + 17.0 * c).sin()).tanh())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_bounded() {
        let z = Latent::new(vec![4, 4], (0..16).map(|i| i as f64 * 0.37 - 3.0).collect()).unwrap();
        let a = ProceduralPredictor.predict(&z, 500, Condition::Label(1)).unwrap();
        let b = ProceduralPredictor.predict(&z, 500, Condition::Label(1)).unwrap();
        assert_eq!(a, b);
        assert!(a.values().iter().all(|v| v.abs() < 1.0));
        let u = ProceduralPredictor.predict(&z, 500, Condition::Unconditional).unwrap();
        assert_ne!(a, u);
    }

    #[test]
    fn matches_formula() {
        let z = Latent::from_vec(vec![0.5, -1.0]).unwrap();
        let e = ProceduralPredictor.predict(&z, 21, Condition::Label(2)).unwrap();
        let expect0 = (0.3f64 * 0.5 + 0.1 * (0.21f64 + 0.0 + 34.0).sin()).tanh();
        let expect1 = (-0.3f64 + 0.1 * (0.21f64 + 1.0 + 34.0).sin()).tanh();
        assert!((e.values()[0] - expect0).abs() < 1e-15);
        assert!((e.values()[1] - expect1).abs() < 1e-15);
    }
}
