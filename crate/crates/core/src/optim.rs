//! Projected stochastic gradient ascent over box-constrained designs with a
//! simulation budget.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::eig_est::OuterBatch;
use crate::error::{Error, Result};
use crate::grad_est::{EstimatorConfig, GradEstimate};
use crate::model::{Design, Model, Simulator};
use crate::report::{indexed, real, reals, write_csv};
use crate::rng::{BedRng, SeedStream};

/// Consecutive estimator failures tolerated before a run aborts.
pub const MAX_CONSECUTIVE_FAILURES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimConfig {
    pub step_rule: StepRule,
    pub learning_rate: f64,
    #[serde(default = "default_betas")]
    pub adam_betas: (f64, f64),
    #[serde(default = "default_eps")]
    pub adam_eps: f64,
    pub max_forward_evals: u64,
    pub max_steps: usize,
}

fn default_betas() -> (f64, f64) {
    (0.9, 0.999)
}

fn default_eps() -> f64 {
    1e-8
}

impl OptimConfig {
    pub fn new(step_rule: StepRule, learning_rate: f64, max_forward_evals: u64, max_steps: usize) -> Self {
        OptimConfig {
            step_rule,
            learning_rate,
            adam_betas: default_betas(),
            adam_eps: default_eps(),
            max_forward_evals,
            max_steps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("optim: learning_rate must be positive".into()));
        }
        let (b1, b2) = self.adam_betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return Err(Error::Config("optim: adam_betas must lie in [0, 1)".into()));
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::Config("optim: adam_eps must be positive".into()));
        }
        if self.max_forward_evals == 0 || self.max_steps == 0 {
            return Err(Error::Config("optim: budget limits must be positive".into()));
        }
        Ok(())
    }
}

/// First-order update state.
#[derive(Debug, Clone)]
pub struct Stepper {
    rule: StepRule,
    lr: f64,
    betas: (f64, f64),
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Stepper {
    pub fn new(cfg: &OptimConfig, dim: usize) -> Self {
        Stepper {
            rule: cfg.step_rule,
            lr: cfg.learning_rate,
            betas: cfg.adam_betas,
            eps: cfg.adam_eps,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
        }
    }

    /// The ascent increment for gradient `g`.
    pub fn step(&mut self, g: &[f64]) -> Vec<f64> {
        match self.rule {
            StepRule::Sgd => g.iter().map(|x| self.lr * x).collect(),
            StepRule::Adam => {
                self.t += 1;
                let (b1, b2) = self.betas;
                let c1 = 1.0 - b1.powi(self.t);
                let c2 = 1.0 - b2.powi(self.t);
                let mut out = Vec::with_capacity(g.len());
                for (k, &x) in g.iter().enumerate() {
                    self.m[k] = b1 * self.m[k] + (1.0 - b1) * x;
                    self.v[k] = b2 * self.v[k] + (1.0 - b2) * x * x;
                    let mh = self.m[k] / c1;
                    let vh = self.v[k] / c2;
                    out.push(self.lr * mh / (vh.sqrt() + self.eps));
                }
                out
            }
        }
    }
}

/// One row of a trajectory. Step 0 is the initial design and has no gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub design: Vec<f64>,
    pub grad_norm: Option<f64>,
    pub forward_evals: u64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub records: Vec<StepRecord>,
    /// `(step, message)` for every skipped step.
    pub failures: Vec<(usize, String)>,
}

impl Trajectory {
    pub fn final_design(&self) -> &[f64] {
        &self.records.last().expect("trajectory has an initial record").design
    }

    pub fn forward_evals(&self) -> u64 {
        self.records.last().map_or(0, |r| r.forward_evals)
    }

    /// `step,lambda_0,…,grad_norm,forward_evals,wall_ms`; a missing gradient
    /// norm is an empty field.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let d = self.records.first().map_or(0, |r| r.design.len());
        let mut header = vec!["step".to_string()];
        header.extend(indexed("lambda", d));
        header.extend(["grad_norm", "forward_evals", "wall_ms"].map(String::from));
        let rows: Vec<Vec<String>> = self
            .records
            .iter()
            .map(|r| {
                let mut row = vec![r.step.to_string()];
                row.extend(reals(&r.design));
                row.push(r.grad_norm.map(real).unwrap_or_default());
                row.push(r.forward_evals.to_string());
                row.push(real(r.wall_ms));
                row
            })
            .collect();
        write_csv(path, &header, &rows)
    }
}

/// Ascent with the configured estimator. Randomness comes from `seeds`:
/// stream `("grad", step)` per gradient, `("atoms", 0)` for a fixed atomic batch.
pub fn optimize<M: Model>(
    model: &M,
    init: &Design,
    estimator: &EstimatorConfig,
    cfg: &OptimConfig,
    seeds: &SeedStream,
) -> Result<Trajectory> {
    estimator.validate()?;
    let atoms = estimator
        .fixed_atoms
        .then(|| OuterBatch::draw(model, estimator.m, &mut seeds.rng("atoms", 0)));
    optimize_with(model, init, cfg, seeds, |sim, rng| {
        estimator.estimate(sim, rng, atoms.as_ref())
    })
}

/// Ascent with an arbitrary gradient source, e.g. an analytic oracle.
pub fn optimize_with<M, F>(
    model: &M,
    init: &Design,
    cfg: &OptimConfig,
    seeds: &SeedStream,
    mut gradient: F,
) -> Result<Trajectory>
where
    M: Model,
    F: FnMut(&mut Simulator<'_, M>, &mut BedRng) -> Result<GradEstimate>,
{
    cfg.validate()?;
    if init.bounds() != model.design_bounds() {
        return Err(Error::Design("initial design bounds differ from the model's".into()));
    }
    if !init.is_feasible() {
        return Err(Error::Design(format!("initial design {:?} is infeasible", init.values())));
    }
    let start = Instant::now();
    let elapsed = || start.elapsed().as_secs_f64() * 1e3;
    let mut design = init.clone();
    let mut sim = Simulator::new(model, design.values())?;
    let mut stepper = Stepper::new(cfg, design.dim());
    let mut records = vec![StepRecord {
        step: 0,
        design: design.values().to_vec(),
        grad_norm: None,
        forward_evals: 0,
        wall_ms: elapsed(),
    }];
    let mut failures = Vec::new();
    let mut consecutive = 0;
    for step in 1..=cfg.max_steps {
        if sim.budget().forward_evals() >= cfg.max_forward_evals {
            break;
        }
        sim.set_design(design.values())?;
        let mut rng = seeds.rng("grad", step as u64);
        match gradient(&mut sim, &mut rng) {
            Ok(est) => {
                consecutive = 0;
                let delta = stepper.step(&est.gradient);
                let proposal: Vec<f64> = design.values().iter().zip(&delta).map(|(x, d)| x + d).collect();
                design.set_projected(&proposal);
                records.push(StepRecord {
                    step,
                    design: design.values().to_vec(),
                    grad_norm: Some(est.norm()),
                    forward_evals: sim.budget().forward_evals(),
                    wall_ms: elapsed(),
                });
            }
            Err(e) => {
                log::warn!("step {step}: gradient estimate failed, step skipped: {e}");
                failures.push((step, e.to_string()));
                consecutive += 1;
                if consecutive >= MAX_CONSECUTIVE_FAILURES {
                    return Err(Error::Optim(format!(
                        "{MAX_CONSECUTIVE_FAILURES} consecutive estimator failures, last at step {step}: {e}"
                    )));
                }
            }
        }
    }
    Ok(Trajectory { records, failures })
}
