use std::collections::HashMap;
use std::ops::AddAssign;

use crate::dual::{lift_design, Dual, Scalar};
use crate::error::Result;

use super::{forward_error, Model};

/// Counter of distinct forward-model evaluations.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct SimBudget {
    forward_evals: u64,
}

impl SimBudget {
    pub fn forward_evals(&self) -> u64 {
        self.forward_evals
    }

    fn charge(&mut self) {
        self.forward_evals += 1;
    }
}

impl AddAssign for SimBudget {
    fn add_assign(&mut self, rhs: SimBudget) {
        self.forward_evals += rhs.forward_evals;
    }
}

/// θ identity: bitwise equality of the parameter vector.
type ThetaKey = Vec<u64>;

fn key(theta: &[f64]) -> ThetaKey {
    theta.iter().map(|v| v.to_bits()).collect()
}

/// Evaluates a model at one design version and charges [`SimBudget`] once per
/// distinct θ.
///
/// Forward outputs are cached by θ identity for the current design; the
/// cache is dropped whenever the design changes. A dual evaluation of a θ
/// whose plain output is cached is free, since both come from the same
/// simulation of `f(θ, λ)`.
pub struct Simulator<'m, M: Model> {
    model: &'m M,
    design: Vec<f64>,
    lifted: Vec<Dual>,
    version: u64,
    cache: HashMap<ThetaKey, Vec<f64>>,
    budget: SimBudget,
}

impl<'m, M: Model> Simulator<'m, M> {
    pub fn new(model: &'m M, design: &[f64]) -> Result<Self> {
        Ok(Simulator {
            model,
            design: design.to_vec(),
            lifted: lift_design(design)?,
            version: 0,
            cache: HashMap::new(),
            budget: SimBudget::default(),
        })
    }

    pub fn model(&self) -> &'m M {
        self.model
    }

    pub fn design(&self) -> &[f64] {
        &self.design
    }

    pub fn design_dual(&self) -> &[Dual] {
        &self.lifted
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn budget(&self) -> SimBudget {
        self.budget
    }

    /// Move to a new design; a changed design invalidates the cache.
    pub fn set_design(&mut self, design: &[f64]) -> Result<()> {
        if design != self.design.as_slice() {
            self.design = design.to_vec();
            self.lifted = lift_design(design)?;
            self.version += 1;
            self.cache.clear();
        }
        Ok(())
    }

    fn check<S: Scalar>(&self, theta: &[f64], out: Vec<S>) -> Result<Vec<S>> {
        if out.iter().all(|v| v.value().is_finite()) {
            Ok(out)
        } else {
            Err(forward_error(theta, &self.design, "non-finite forward output"))
        }
    }

    /// Plain `f(θ, λ)`, cached.
    pub fn forward(&mut self, theta: &[f64]) -> Result<Vec<f64>> {
        let k = key(theta);
        if let Some(out) = self.cache.get(&k) {
            return Ok(out.clone());
        }
        self.budget.charge();
        let out = self.model.forward(theta, &self.design)?;
        let out = self.check(theta, out)?;
        self.cache.insert(k, out.clone());
        Ok(out)
    }

    /// Plain `f(θ, λ)` for a θ that will not be seen again; charged, not cached.
    pub fn forward_once(&mut self, theta: &[f64]) -> Result<Vec<f64>> {
        self.budget.charge();
        let out = self.model.forward(theta, &self.design)?;
        self.check(theta, out)
    }

    /// Dual `f(θ, λ)` with tangents ∂f/∂λ; charged only for an unseen θ.
    pub fn forward_dual(&mut self, theta: &[f64]) -> Result<Vec<Dual>> {
        let k = key(theta);
        let out = self.model.forward(theta, &self.lifted)?;
        let out = self.check(theta, out)?;
        if !self.cache.contains_key(&k) {
            self.budget.charge();
            self.cache.insert(k, out.iter().map(Dual::value).collect());
        }
        Ok(out)
    }

    /// Dual forward for a θ that will not be seen again.
    pub fn forward_dual_once(&mut self, theta: &[f64]) -> Result<Vec<Dual>> {
        self.budget.charge();
        let out = self.model.forward(theta, &self.lifted)?;
        self.check(theta, out)
    }

    /// `y = g(θ, ε, λ)` with tangents ∂y/∂λ.
    pub fn simulate(&mut self, theta: &[f64], noise: &[f64]) -> Result<Vec<Dual>> {
        let f = self.forward_dual(theta)?;
        Ok(self.model.observe(&f, noise))
    }

    /// Total λ-derivative of `log l(y | θ, λ)`, through `y`'s tangents and
    /// through the explicit dependence of `f` on λ.
    pub fn log_likelihood(&mut self, y: &[Dual], theta: &[f64]) -> Result<Dual> {
        let f = self.forward_dual(theta)?;
        Ok(sanitize(self.model.log_likelihood_given(y, &f)))
    }

    pub fn log_likelihood_f64(&mut self, y: &[f64], theta: &[f64]) -> Result<f64> {
        let f = self.forward(theta)?;
        Ok(sanitize(self.model.log_likelihood_given(y, &f)))
    }
}

/// Underflowed or undefined log-densities become −∞ with a zero tangent.
pub fn sanitize<S: Scalar>(ll: S) -> S {
    let v = ll.value();
    if v.is_nan() || v == f64::NEG_INFINITY {
        ll.lift(f64::NEG_INFINITY)
    } else {
        ll
    }
}
