//! Bayesian linear regression with a polynomial design matrix.
//!
//! `y = Dθ + σε` with rows `D_k = [1, λ_k, λ_k²]`, `θ ~ N(0, I₃)`. Its EIG has a
//! closed form, which makes it the analytic oracle for every estimator.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::dual::{lift_design, Scalar};
use crate::error::{Error, Result};

use super::{gaussian_fixed_partials, gaussian_log_density_fixed, Model, Theta};

#[derive(Debug, Clone)]
pub struct LinearModel {
    bounds: Vec<(f64, f64)>,
    sigma2: f64,
    sigma: f64,
}

impl LinearModel {
    /// `n` observations with noise variance `sigma2`, designs in `[-1, 1]ⁿ`.
    pub fn new(n: usize, sigma2: f64) -> Result<Self> {
        Self::with_bounds(vec![(-1.0, 1.0); n], sigma2)
    }

    pub fn with_bounds(bounds: Vec<(f64, f64)>, sigma2: f64) -> Result<Self> {
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::Config(format!("linear model: sigma2 must be positive, got {sigma2}")));
        }
        Ok(LinearModel { bounds, sigma2, sigma: sigma2.sqrt() })
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    fn design_matrix(design: &[f64]) -> Vec<[f64; 3]> {
        design.iter().map(|&l| [1.0, l, l * l]).collect()
    }

    /// Posterior covariance `(I + D'D/σ²)⁻¹` and the matrix `Σ D'/σ²` mapping
    /// `y` to the posterior mean.
    fn posterior_factors(&self, design: &[f64]) -> (Matrix3<f64>, Vec<Vector3<f64>>) {
        let rows = Self::design_matrix(design);
        let mut precision = Matrix3::identity();
        for r in &rows {
            let v = Vector3::new(r[0], r[1], r[2]);
            precision += v * v.transpose() / self.sigma2;
        }
        let cov = precision
            .try_inverse()
            .expect("I + D'D/σ² is positive definite");
        let gains = rows
            .iter()
            .map(|r| cov * Vector3::new(r[0], r[1], r[2]) / self.sigma2)
            .collect();
        (cov, gains)
    }

    /// Posterior mean and covariance of θ given `y`.
    pub fn posterior_moments(&self, y: &[f64], design: &[f64]) -> (Vector3<f64>, Matrix3<f64>) {
        let (cov, gains) = self.posterior_factors(design);
        let mean = gains
            .iter()
            .zip(y)
            .fold(Vector3::zeros(), |acc, (g, &yk)| acc + g * yk);
        (mean, cov)
    }

    /// Exact draw from `N(Σ D'y/σ², Σ)`, `Σ = (I + D'D/σ²)⁻¹`.
    pub fn conjugate_posterior_sample<R: Rng + ?Sized>(
        &self,
        y: &[f64],
        design: &[f64],
        rng: &mut R,
    ) -> Theta {
        let (mean, cov) = self.posterior_moments(y, design);
        let chol = cov
            .cholesky()
            .expect("posterior covariance is positive definite");
        let z = Vector3::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        let draw = mean + chol.l() * z;
        vec![draw[0], draw[1], draw[2]]
    }

    /// Closed-form EIG `½ log(|DD' + σ²I| / |σ²I|)` evaluated on any scalar.
    pub fn eig<S: Scalar>(&self, design: &[S]) -> S {
        let n = design.len();
        let row = |l: &S| [l.lift(1.0), l.clone(), l.square()];
        let rows: Vec<[S; 3]> = design.iter().map(row).collect();
        let mut gram: Vec<Vec<S>> = Vec::with_capacity(n);
        for i in 0..n {
            let mut r = Vec::with_capacity(n);
            for j in 0..n {
                let mut s = rows[i][0].clone() * rows[j][0].clone();
                for c in 1..3 {
                    s = s + rows[i][c].clone() * rows[j][c].clone();
                }
                if i == j {
                    s = s + self.sigma2;
                }
                r.push(s);
            }
            gram.push(r);
        }
        (log_abs_det(gram) - (n as f64) * self.sigma2.ln()) * 0.5
    }

    /// Exact EIG and its gradient.
    pub fn eig_oracle(&self, design: &[f64]) -> Result<(f64, Vec<f64>)> {
        let u = self.eig(&lift_design(design)?);
        Ok((u.value(), u.tangent().to_vec()))
    }
}

/// `ln |det A|` by LU decomposition with partial pivoting on primal values.
pub fn log_abs_det<S: Scalar>(mut a: Vec<Vec<S>>) -> S {
    let n = a.len();
    assert!(n > 0, "empty matrix");
    let mut acc = a[0][0].lift(0.0);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| {
                a[i][col]
                    .value()
                    .abs()
                    .total_cmp(&a[j][col].value().abs())
            })
            .unwrap();
        a.swap(col, pivot);
        let p = a[col][col].clone();
        acc = acc + p.abs().ln();
        for r in (col + 1)..n {
            let factor = a[r][col].clone() / p.clone();
            for c in (col + 1)..n {
                let v = a[r][c].clone() - factor.clone() * a[col][c].clone();
                a[r][c] = v;
            }
        }
    }
    acc
}

impl Model for LinearModel {
    fn name(&self) -> &'static str {
        "linear"
    }

    fn design_bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    fn param_dim(&self) -> usize {
        3
    }

    fn noise_dim(&self) -> usize {
        self.bounds.len()
    }

    fn obs_dim(&self) -> usize {
        self.bounds.len()
    }

    fn sample_prior<R: Rng + ?Sized>(&self, rng: &mut R) -> Theta {
        (0..3).map(|_| rng.sample(StandardNormal)).collect()
    }

    fn log_prior(&self, theta: &[f64]) -> f64 {
        theta
            .iter()
            .map(|t| -0.5 * t * t - 0.5 * (2.0 * std::f64::consts::PI).ln())
            .sum()
    }

    fn forward<S: Scalar>(&self, theta: &[f64], design: &[S]) -> Result<Vec<S>> {
        Ok(design
            .iter()
            .map(|l| l.square() * theta[2] + l.clone() * theta[1] + theta[0])
            .collect())
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
        vec![1.0; 3]
    }

    fn exact_posterior<R: Rng + ?Sized>(&self, y: &[f64], design: &[f64], rng: &mut R) -> Option<Theta> {
        Some(self.conjugate_posterior_sample(y, design, rng))
    }
}
