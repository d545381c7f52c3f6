//! One-compartment pharmacokinetic model with first-order absorption.
//!
//! Concentration at sampling time `t`:
//! `f_t = D/V · k_a/(k_a − k_e) · (e^{−k_e t} − e^{−k_a t})` with dose `D = 400`,
//! observed as `y_t = f_t(1 + σ₁ε₁) + σ₂ε₂`. The two Gaussian noises are
//! marginalized, giving `y_t ~ N(f_t, σ₁²f_t² + σ₂²)`.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::dual::Scalar;
use crate::error::{Error, Result};

use super::{gaussian_log_density, Model, Theta, LN_2PI};

pub const DOSE: f64 = 400.0;
pub const N_TIMES: usize = 10;
/// Practical upper cap on sampling times (hours).
pub const MAX_TIME: f64 = 24.0;
/// Prior mean of `(ln k_a, ln k_e, ln V)`.
pub const LOG_PRIOR_MEAN: [f64; 3] = [0.0, -std::f64::consts::LN_10, 2.995_732_273_553_991];
pub const LOG_PRIOR_VAR: f64 = 0.05;

#[derive(Debug, Clone)]
pub struct PkModel {
    mult_var: f64,
    add_var: f64,
    mult_sd: f64,
    add_sd: f64,
    bounds: Vec<(f64, f64)>,
}

impl PkModel {
    /// Multiplicative noise variance `σ₁²` and additive noise variance `σ₂²`.
    pub fn new(mult_var: f64, add_var: f64) -> Result<Self> {
        if !(mult_var >= 0.0 && mult_var.is_finite()) {
            return Err(Error::Config(format!("pk: multiplicative variance must be >= 0, got {mult_var}")));
        }
        if !(add_var > 0.0 && add_var.is_finite()) {
            return Err(Error::Config(format!("pk: additive variance must be > 0, got {add_var}")));
        }
        Ok(PkModel {
            mult_var,
            add_var,
            mult_sd: mult_var.sqrt(),
            add_sd: add_var.sqrt(),
            bounds: vec![(0.0, MAX_TIME); N_TIMES],
        })
    }

    /// Small-EIG setting: `ε₁ ~ N(0, 0.01)`, `ε₂ ~ N(0, 0.1)`.
    pub fn mixture_noise() -> Self {
        PkModel::new(0.01, 0.1).unwrap()
    }

    /// Large-EIG setting: `ε₁ = 0`, `ε₂ ~ N(0, 0.001)`.
    pub fn additive_noise() -> Self {
        PkModel::new(0.0, 0.001).unwrap()
    }

    pub fn variances(&self) -> (f64, f64) {
        (self.mult_var, self.add_var)
    }
}

impl Model for PkModel {
    fn name(&self) -> &'static str {
        "pk"
    }

    fn design_bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    fn param_dim(&self) -> usize {
        3
    }

    /// `ε₁` for every time, then `ε₂` for every time.
    fn noise_dim(&self) -> usize {
        2 * N_TIMES
    }

    fn obs_dim(&self) -> usize {
        N_TIMES
    }

    fn sample_prior<R: Rng + ?Sized>(&self, rng: &mut R) -> Theta {
        let sd = LOG_PRIOR_VAR.sqrt();
        LOG_PRIOR_MEAN
            .iter()
            .map(|&m| (m + sd * rng.sample::<f64, _>(StandardNormal)).exp())
            .collect()
    }

    fn log_prior(&self, theta: &[f64]) -> f64 {
        if theta.iter().any(|&t| !(t > 0.0)) {
            return f64::NEG_INFINITY;
        }
        let z: Vec<f64> = theta.iter().map(|t| t.ln()).collect();
        self.log_prior_unconstrained(&z) - z.iter().sum::<f64>()
    }

    fn forward<S: Scalar>(&self, theta: &[f64], design: &[S]) -> Result<Vec<S>> {
        let (ka, ke, v) = (theta[0], theta[1], theta[2]);
        let scale = DOSE / v;
        let diff = ka - ke;
        Ok(design
            .iter()
            .map(|t| {
                if diff.abs() < 1e-10 * ka.abs().max(1e-300) {
                    // k_a → k_e limit of the Bateman function.
                    (t.clone() * -ke).exp() * t.clone() * (scale * ka)
                } else {
                    ((t.clone() * -ke).exp() - (t.clone() * -ka).exp()) * (scale * ka / diff)
                }
            })
            .collect())
    }

    fn observe<S: Scalar>(&self, forward: &[S], noise: &[f64]) -> Vec<S> {
        let (e1, e2) = noise.split_at(N_TIMES);
        forward
            .iter()
            .zip(e1.iter().zip(e2))
            .map(|(f, (a, b))| f.clone() * (1.0 + self.mult_sd * a) + self.add_sd * b)
            .collect()
    }

    /// `y ~ N(f, σ₁²f² + σ₂²)`.
    fn obs_log_density<S: Scalar>(&self, y: &S, f: &S) -> S {
        let var = f.square() * self.mult_var + self.add_var;
        gaussian_log_density(y, f, &var)
    }

    fn obs_log_density_partials(&self, y: f64, f: f64) -> (f64, f64, f64) {
        let var = self.mult_var * f * f + self.add_var;
        let r = y - f;
        let q = r * r / var;
        let value = -0.5 * (var.ln() + LN_2PI + q);
        // ∂/∂var = (q − 1)/(2 var), ∂var/∂f = 2σ₁²f.
        let d_var = (q - 1.0) / (2.0 * var);
        (value, -r / var, r / var + d_var * 2.0 * self.mult_var * f)
    }

    fn to_unconstrained(&self, theta: &[f64]) -> Vec<f64> {
        theta.iter().map(|t| t.ln()).collect()
    }

    fn from_unconstrained(&self, z: &[f64]) -> Theta {
        z.iter().map(|v| v.exp()).collect()
    }

    /// Normal log density of `ln θ`.
    fn log_prior_unconstrained(&self, z: &[f64]) -> f64 {
        z.iter()
            .zip(LOG_PRIOR_MEAN)
            .map(|(v, m)| {
                -0.5 * (v - m) * (v - m) / LOG_PRIOR_VAR
                    - 0.5 * (2.0 * std::f64::consts::PI * LOG_PRIOR_VAR).ln()
            })
            .sum()
    }

    fn unconstrained_scale(&self) -> Vec<f64> {
        vec![LOG_PRIOR_VAR.sqrt(); 3]
    }

    fn entropy_coordinates(&self, theta: &[f64]) -> Vec<f64> {
        self.to_unconstrained(theta)
    }

    fn entropy_space(&self) -> &'static str {
        "log-theta"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prior_constants() {
        assert!((LOG_PRIOR_MEAN[1] - 0.1_f64.ln()).abs() < 1e-15);
        assert!((LOG_PRIOR_MEAN[2] - 20.0_f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn concentration_by_hand() {
        let m = PkModel::mixture_noise();
        let f = m.forward(&[1.0, 0.1, 20.0], &[2.0][..]).unwrap();
        let expect = 400.0 / 20.0 * (1.0 / 0.9) * ((-0.2_f64).exp() - (-2.0_f64).exp());
        assert!((f[0] - expect).abs() < 1e-12);
        let f0 = m.forward(&[1.0, 0.1, 20.0], &[0.0][..]).unwrap();
        assert_eq!(f0[0], 0.0);
    }

    #[test]
    fn equal_rates_limit_is_continuous() {
        let m = PkModel::mixture_noise();
        let a = m.forward(&[0.5, 0.5, 20.0], &[3.0][..]).unwrap()[0];
        let b = m.forward(&[0.5 + 1e-7, 0.5, 20.0], &[3.0][..]).unwrap()[0];
        assert!((a - b).abs() / a < 1e-5);
    }

    #[test]
    fn prior_jacobian() {
        let m = PkModel::mixture_noise();
        let theta = [1.3, 0.08, 25.0];
        let z = m.to_unconstrained(&theta);
        let lhs = m.log_prior(&theta);
        let rhs = m.log_prior_unconstrained(&z) - z.iter().sum::<f64>();
        assert!((lhs - rhs).abs() < 1e-14);
        assert_eq!(m.log_prior(&[1.0, -0.1, 20.0]), f64::NEG_INFINITY);
    }
}
