//! Fast invariant checks run by the `selftest` subcommand.

use std::fmt;

use crate::config::BuiltModel;
use crate::dual::{default_fd_step, grad_check, Dual, Scalar};
use crate::eig_est::{pce_value_on, srnmc_terms, srnmc_value_on, NestedBatch, OuterBatch};
use crate::error::{Error, Result};
use crate::grad_est::beeg_ap_gradient_on;
use crate::model::{Design, LinearModel, Model, PkModel, Simulator, Stat5Model, ToyModel};
use crate::rng::SeedStream;
use crate::stats::mean_se;
use crate::with_model;

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "[{tag}] {}: {}", self.name, self.detail)
    }
}

fn outcome(name: &'static str, passed: bool, detail: String) -> CheckOutcome {
    CheckOutcome { name, passed, detail }
}

/// One instance of each model. STAT5 uses a larger noise than its default so
/// that srNMC weights spread over several atoms and gradients are not roundoff.
pub fn all_models() -> Vec<BuiltModel> {
    vec![
        BuiltModel::Linear(LinearModel::new(3, 0.1).expect("valid linear model")),
        BuiltModel::Toy(ToyModel::large_noise()),
        BuiltModel::Pk(PkModel::mixture_noise()),
        BuiltModel::Stat5(Stat5Model::with_synthetic_input(1e-2)),
    ]
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-12);
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
}

/// Dual gradients of a random linear functional of the forward output match
/// central differences.
fn check_forward_ad(seeds: &SeedStream) -> Result<CheckOutcome> {
    let mut worst = 0.0_f64;
    for (k, built) in all_models().iter().enumerate() {
        let mut rng = seeds.rng("ad", k as u64);
        with_model!(built, model => {
            for _ in 0..3 {
                let design = Design::random(model.design_bounds(), &mut rng);
                // Keep finite-difference probes inside the box.
                let design = shrink_into(model.design_bounds(), design.values());
                let theta = model.sample_prior(&mut rng);
                let weights: Vec<f64> = model.sample_noise(&mut rng);
                let h = default_fd_step(1.0);
                let err = grad_check(
                    |d: &[Dual]| -> Result<Dual> {
                        let f = model.forward(&theta, d)?;
                        let mut acc = Dual::constant(0.0, d.len());
                        for (fk, wk) in f.iter().zip(&weights) {
                            acc = acc + fk.clone() * *wk;
                        }
                        Ok(acc)
                    },
                    &design,
                    h,
                )?;
                worst = worst.max(err);
            }
        });
    }
    Ok(outcome("forward AD matches finite differences", worst < 1e-4, format!("max rel err {worst:.2e}")))
}

fn shrink_into(bounds: &[(f64, f64)], v: &[f64]) -> Vec<f64> {
    v.iter()
        .zip(bounds)
        .map(|(&x, &(lo, hi))| {
            let pad = 1e-3 * (hi - lo);
            x.clamp(lo + pad, hi - pad)
        })
        .collect()
}

fn check_linear_oracle(seeds: &SeedStream) -> Result<CheckOutcome> {
    let model = LinearModel::new(3, 0.1)?;
    let mut rng = seeds.rng("oracle", 0);
    let mut worst = 0.0_f64;
    for _ in 0..5 {
        let design = Design::random(model.design_bounds(), &mut rng);
        let err = grad_check(|d: &[Dual]| -> Result<Dual> { Ok(model.eig(d)) }, design.values(), 1e-6)?;
        worst = worst.max(err);
    }
    Ok(outcome("closed-form EIG gradient", worst < 1e-6, format!("max rel err {worst:.2e}")))
}

fn check_caps(seeds: &SeedStream) -> Result<CheckOutcome> {
    let mut violations = 0;
    let mut trials = 0;
    for (k, built) in all_models().iter().enumerate() {
        let mut rng = seeds.rng("caps", k as u64);
        with_model!(built, model => {
            for t in 0..10 {
                let m = 2 + t * 3;
                let design = Design::random(model.design_bounds(), &mut rng);
                let mut sim = Simulator::new(model, design.values())?;
                let batch = OuterBatch::draw(model, m, &mut rng);
                if srnmc_value_on(&mut sim, &batch)?.value > (m as f64).ln() {
                    violations += 1;
                }
                let nested = NestedBatch::draw(model, 4, m, &mut rng);
                if pce_value_on(&mut sim, &nested)?.value > ((m + 1) as f64).ln() {
                    violations += 1;
                }
                trials += 2;
            }
        });
    }
    Ok(outcome(
        "srNMC <= ln M and PCE <= ln(N+1)",
        violations == 0,
        format!("{violations} violations in {trials} trials"),
    ))
}

fn check_beeg_identity(seeds: &SeedStream) -> Result<CheckOutcome> {
    let mut worst = 0.0_f64;
    for (k, built) in all_models().iter().enumerate() {
        let mut rng = seeds.rng("identity", k as u64);
        with_model!(built, model => {
            for _ in 0..2 {
                let design = Design::random(model.design_bounds(), &mut rng);
                let batch = OuterBatch::draw(model, 20, &mut rng);
                let mut sim = Simulator::new(model, design.values())?;
                let beeg = beeg_ap_gradient_on(&mut sim, &batch)?.gradient;
                let dual = srnmc_terms::<_, Dual>(&mut sim, &batch)?.mean();
                worst = worst.max(rel_err(&beeg, dual.tangent()));
            }
        });
    }
    Ok(outcome("BEEG-AP equals the srNMC gradient", worst < 1e-10, format!("max rel err {worst:.2e}")))
}

/// Replicate means of srNMC stay under the closed-form EIG and grow with M.
fn check_lower_bound(seeds: &SeedStream) -> Result<CheckOutcome> {
    let model = LinearModel::new(3, 0.1)?;
    let design = [0.3, -0.5, 0.8];
    let (oracle, _) = model.eig_oracle(&design)?;
    let reps = 400;
    let mut means = Vec::new();
    let mut ok = true;
    for (k, &m) in [2usize, 8, 32].iter().enumerate() {
        let stream = seeds.child("lower-bound", k as u64);
        let mut sim = Simulator::new(&model, &design)?;
        let vals = (0..reps)
            .map(|r| {
                let batch = OuterBatch::draw(&model, m, &mut stream.rng("rep", r));
                srnmc_value_on(&mut sim, &batch).map(|e| e.value)
            })
            .collect::<Result<Vec<_>>>()?;
        let (mean, se) = mean_se(&vals);
        ok &= mean <= oracle + 3.0 * se;
        if let Some(&(prev, prev_se)) = means.last() {
            ok &= mean + 3.0 * f64::hypot(se, prev_se) >= prev;
        }
        means.push((mean, se));
    }
    let shown: Vec<String> = means.iter().map(|(m, s)| format!("{m:.3}±{s:.3}")).collect();
    Ok(outcome(
        "srNMC lower bound, nondecreasing in M",
        ok,
        format!("means [{}] vs EIG {oracle:.3}", shown.join(", ")),
    ))
}

/// Run every check; an error inside a check counts as a failure.
pub fn run_selftest(seed: u64) -> Vec<CheckOutcome> {
    let seeds = SeedStream::new(seed);
    let checks: [(&'static str, fn(&SeedStream) -> Result<CheckOutcome>); 5] = [
        ("closed-form EIG gradient", check_linear_oracle),
        ("forward AD matches finite differences", check_forward_ad),
        ("srNMC <= ln M and PCE <= ln(N+1)", check_caps),
        ("BEEG-AP equals the srNMC gradient", check_beeg_identity),
        ("srNMC lower bound, nondecreasing in M", check_lower_bound),
    ];
    checks
        .iter()
        .map(|(name, check)| {
            check(&seeds).unwrap_or_else(|e: Error| outcome(name, false, format!("error: {e}")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes() {
        for o in run_selftest(0) {
            assert!(o.passed, "{o}");
        }
    }
}
