//! Statistical models with a reparameterizable sampling path and a tractable
//! likelihood.
//!
//! Every model splits the sampling path into an expensive forward model
//! `f(θ, λ)` and a cheap noise layer, `y = g(f(θ, λ), ε)`. The likelihood is
//! evaluated from `f` as well, so the number of distinct `(θ, λ)` pairs pushed
//! through `f` is the simulation cost. [`Simulator`] tracks that cost.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::dual::{Dual, Scalar};
use crate::error::{Error, Result};

mod design;
pub mod linear;
pub mod pk;
mod sim;
pub mod stat5;
pub mod toy;

pub use design::Design;
pub use linear::LinearModel;
pub use pk::PkModel;
pub use sim::{SimBudget, Simulator};
pub use sim::sanitize as sanitize_log_likelihood;
pub use stat5::{EpoRInput, Stat5Model};
pub use toy::ToyModel;

/// Parameter vector θ.
pub type Theta = Vec<f64>;
/// Base noise draw ε.
pub type NoiseDraw = Vec<f64>;

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Log density of `N(mean, var)` at `y`.
#[inline]
pub fn gaussian_log_density<S: Scalar>(y: &S, mean: &S, var: &S) -> S {
    let r = y.clone() - mean.clone();
    -(var.ln() + LN_2PI) * 0.5 - r.square() / (var.clone() * 2.0)
}

/// Log density of `N(mean, sd²)` for a fixed (design-independent) `sd`.
#[inline]
pub fn gaussian_log_density_fixed<S: Scalar>(y: &S, mean: &S, sd: f64) -> S {
    let r = (y.clone() - mean.clone()) / sd;
    -(r.square() * 0.5) - (sd.ln() + 0.5 * LN_2PI)
}

/// `(log density, ∂/∂y, ∂/∂mean)` of `N(mean, sd²)` at `y`.
#[inline]
pub fn gaussian_fixed_partials(y: f64, mean: f64, sd: f64) -> (f64, f64, f64) {
    let r = y - mean;
    let prec = 1.0 / (sd * sd);
    (-0.5 * r * r * prec - (sd.ln() + 0.5 * LN_2PI), -r * prec, r * prec)
}

pub trait Model: Send + Sync {
    fn name(&self) -> &'static str;
    fn design_bounds(&self) -> &[(f64, f64)];
    fn param_dim(&self) -> usize;
    fn noise_dim(&self) -> usize;
    fn obs_dim(&self) -> usize;

    fn design_dim(&self) -> usize {
        self.design_bounds().len()
    }

    fn sample_prior<R: Rng + ?Sized>(&self, rng: &mut R) -> Theta;

    /// `−∞` outside the prior support.
    fn log_prior(&self, theta: &[f64]) -> f64;

    /// I.i.d. standard normal base noise; scales are applied in [`Model::observe`].
    fn sample_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> NoiseDraw {
        (0..self.noise_dim()).map(|_| rng.sample(StandardNormal)).collect()
    }

    /// The forward model `f(θ, λ)`.
    fn forward<S: Scalar>(&self, theta: &[f64], design: &[S]) -> Result<Vec<S>>;

    /// Apply base noise to a forward output.
    fn observe<S: Scalar>(&self, forward: &[S], noise: &[f64]) -> Vec<S>;

    /// Log density of one observation given its forward output. Observations
    /// are conditionally independent given `f`.
    fn obs_log_density<S: Scalar>(&self, y: &S, f: &S) -> S;

    /// `(log density, ∂/∂y, ∂/∂f)` of one observation.
    fn obs_log_density_partials(&self, y: f64, f: f64) -> (f64, f64, f64) {
        let v = self.obs_log_density(&Dual::variable(y, 0, 2), &Dual::variable(f, 1, 2));
        (v.value(), v.tangent()[0], v.tangent()[1])
    }

    /// `log l(y | θ, λ)` given `f(θ, λ)`.
    fn log_likelihood_given<S: Scalar>(&self, y: &[S], forward: &[S]) -> S {
        let mut acc = y[0].lift(0.0);
        for (yk, fk) in y.iter().zip(forward) {
            acc = acc + self.obs_log_density(yk, fk);
        }
        acc
    }

    /// Map θ to the unconstrained space the posterior samplers work in.
    fn to_unconstrained(&self, theta: &[f64]) -> Vec<f64> {
        theta.to_vec()
    }

    fn from_unconstrained(&self, z: &[f64]) -> Theta {
        z.to_vec()
    }

    /// Prior log density in unconstrained coordinates (Jacobian included).
    fn log_prior_unconstrained(&self, z: &[f64]) -> f64 {
        self.log_prior(z)
    }

    /// Prior standard deviation per unconstrained coordinate.
    fn unconstrained_scale(&self) -> Vec<f64>;

    /// Exact posterior draw, for models that admit one.
    fn exact_posterior<R: Rng + ?Sized>(
        &self,
        _y: &[f64],
        _design: &[f64],
        _rng: &mut R,
    ) -> Option<Theta> {
        None
    }

    /// Coordinates in which posterior entropies are reported.
    fn entropy_coordinates(&self, theta: &[f64]) -> Vec<f64> {
        theta.to_vec()
    }

    fn entropy_space(&self) -> &'static str {
        "theta"
    }
}

/// Plain-real sampling path `g(θ, ε, λ)` without budget accounting.
pub fn sample_path<M: Model>(model: &M, theta: &[f64], noise: &[f64], design: &[f64]) -> Result<Vec<f64>> {
    let f = model.forward(theta, design)?;
    Ok(model.observe(&f, noise))
}

pub(crate) fn forward_error(theta: &[f64], design: &[f64], reason: impl Into<String>) -> Error {
    Error::Forward {
        theta: theta.to_vec(),
        design: design.to_vec(),
        reason: reason.into(),
    }
}
