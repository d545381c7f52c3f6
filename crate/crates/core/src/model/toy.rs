//! Two-output nonlinear algebraic model with a single optimal design.
//!
//! ```text
//! y₁ = 0.5θ³d₁ + θ·exp(−|0.2 − 0.5d₁|) + d₁² + σε₁
//! y₂ = 0.5θ³(d₂ + 1.6) + θ·exp(−|0.6 + 0.5d₂|) + d₂² + σε₂
//! ```
//! with `θ ~ Unif(0, 1)` and `d ∈ [0, 1]²`.

use rand::Rng;

use crate::dual::Scalar;
use crate::error::{Error, Result};

use super::{gaussian_fixed_partials, gaussian_log_density_fixed, Model, Theta};

/// Noise standard deviation of the large-noise (small EIG) setting.
pub const LARGE_NOISE_SD: f64 = 0.1;
/// Noise standard deviation of the small-noise (large EIG) setting.
pub const SMALL_NOISE_SD: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct ToyModel {
    sigma: f64,
    bounds: [(f64, f64); 2],
}

impl ToyModel {
    pub fn new(noise_sd: f64) -> Result<Self> {
        if !(noise_sd > 0.0 && noise_sd.is_finite()) {
            return Err(Error::Config(format!("toy model: noise sd must be positive, got {noise_sd}")));
        }
        Ok(ToyModel { sigma: noise_sd, bounds: [(0.0, 1.0); 2] })
    }

    pub fn large_noise() -> Self {
        ToyModel::new(LARGE_NOISE_SD).unwrap()
    }

    pub fn small_noise() -> Self {
        ToyModel::new(SMALL_NOISE_SD).unwrap()
    }

    pub fn noise_sd(&self) -> f64 {
        self.sigma
    }
}

impl Model for ToyModel {
    fn name(&self) -> &'static str {
        "toy"
    }

    fn design_bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    fn param_dim(&self) -> usize {
        1
    }

    fn noise_dim(&self) -> usize {
        2
    }

    fn obs_dim(&self) -> usize {
        2
    }

    fn sample_prior<R: Rng + ?Sized>(&self, rng: &mut R) -> Theta {
        vec![rng.random::<f64>()]
    }

    fn log_prior(&self, theta: &[f64]) -> f64 {
        if (0.0..=1.0).contains(&theta[0]) {
            0.0
        } else {
            f64::NEG_INFINITY
        }
    }

    fn forward<S: Scalar>(&self, theta: &[f64], design: &[S]) -> Result<Vec<S>> {
        let t = theta[0];
        let t3 = 0.5 * t * t * t;
        let d1 = &design[0];
        let d2 = &design[1];
        let y1 = d1.clone() * t3 + (-(d1.clone() * -0.5 + 0.2).abs()).exp() * t + d1.square();
        let y2 = (d2.clone() + 1.6) * t3 + (-(d2.clone() * 0.5 + 0.6).abs()).exp() * t + d2.square();
        Ok(vec![y1, y2])
    }

    fn observe<S: Scalar>(&self, forward: &[S], noise: &[f64]) -> Vec<S> {
        forward
            .iter()
            .zip(noise)
            .map(|(f, e)| f.clone() + self.sigma * e)
            .collect()
    }

    fn obs_log_density<S: Scalar>(&self, y: &S, f: &S) -> S {
        gaussian_log_density_fixed(y, f, self.sigma)
    }

    fn obs_log_density_partials(&self, y: f64, f: f64) -> (f64, f64, f64) {
        gaussian_fixed_partials(y, f, self.sigma)
    }

    fn unconstrained_scale(&self) -> Vec<f64> {
        vec![(1.0_f64 / 12.0).sqrt()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_parameter_zero_design() {
        let m = ToyModel::large_noise();
        let y = super::super::sample_path(&m, &[0.0], &[0.0, 0.0], &[0.0, 0.0]).unwrap();
        assert_eq!(y, vec![0.0, 0.0]);
    }

    #[test]
    fn prior_support() {
        let m = ToyModel::large_noise();
        assert_eq!(m.log_prior(&[0.5]), 0.0);
        assert_eq!(m.log_prior(&[1.5]), f64::NEG_INFINITY);
        assert_eq!(m.log_prior(&[-0.1]), f64::NEG_INFINITY);
    }

    #[test]
    fn forward_by_hand() {
        let m = ToyModel::large_noise();
        let f = m.forward(&[0.5], &[0.3, 0.7][..]).unwrap();
        let y1 = 0.5 * 0.125 * 0.3 + 0.5 * (-(0.2_f64 - 0.15).abs()).exp() + 0.09;
        let y2 = 0.5 * 0.125 * 2.3 + 0.5 * (-(0.6_f64 + 0.35)).exp() + 0.49;
        assert!((f[0] - y1).abs() < 1e-15);
        assert!((f[1] - y2).abs() < 1e-15);
    }
}
