//! Estimators of the EIG gradient with respect to the design.
//!
//! Both proposed estimators rest on the posterior-expectation form of the
//! gradient,
//!
//! ```text
//! ∇U(λ) = E_{θ,ε} E_{θ'|y} [ ∇ log l(y|θ, λ) − ∇ log l(y|θ', λ) ],  y = g(θ, ε, λ),
//! ```
//!
//! where every `∇` is the total derivative in λ, through `y` and through the
//! explicit dependence of the likelihood. UEEG-MCMC approximates the inner
//! expectation with posterior draws; BEEG-AP replaces the prior by the atomic
//! distribution on one batch, which makes the posterior a softmax over that
//! batch. The PCE gradient is included as a baseline.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dual::{log_sum_exp, Dual};
use crate::eig_est::{pce_terms, NestedBatch, OuterBatch};
use crate::error::{Error, Result};
use crate::model::{sanitize_log_likelihood, Model, Simulator};
use crate::rng::split;
use crate::sampler::{posterior_chain, SamplerConfig};

/// A gradient estimate with its cost.
#[derive(Debug, Clone, PartialEq)]
pub struct GradEstimate {
    pub gradient: Vec<f64>,
    pub outer_m: usize,
    pub inner_n: usize,
    pub forward_evals_used: u64,
}

impl GradEstimate {
    pub fn norm(&self) -> f64 {
        self.gradient.iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    UeegMcmc,
    BeegAp,
    Pce,
}

impl EstimatorKind {
    pub fn label(&self) -> &'static str {
        match self {
            EstimatorKind::UeegMcmc => "ueeg_mcmc",
            EstimatorKind::BeegAp => "beeg_ap",
            EstimatorKind::Pce => "pce",
        }
    }
}

/// Which estimator to run and with how many samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    pub kind: EstimatorKind,
    /// Outer samples `M`.
    pub m: usize,
    /// Contrastive samples `N` (PCE only; UEEG-MCMC takes its inner sample
    /// count from the sampler).
    #[serde(default)]
    pub n: usize,
    #[serde(default)]
    pub sampler: SamplerConfig,
    /// BEEG-AP: keep one atomic batch for a whole optimization run.
    #[serde(default)]
    pub fixed_atoms: bool,
}

impl EstimatorConfig {
    pub fn beeg_ap(m: usize) -> Self {
        EstimatorConfig {
            kind: EstimatorKind::BeegAp,
            m,
            n: 0,
            sampler: SamplerConfig::default(),
            fixed_atoms: false,
        }
    }

    pub fn ueeg_mcmc(m: usize, sampler: SamplerConfig) -> Self {
        EstimatorConfig { kind: EstimatorKind::UeegMcmc, m, n: 0, sampler, fixed_atoms: false }
    }

    pub fn pce(m: usize, n: usize) -> Self {
        EstimatorConfig {
            kind: EstimatorKind::Pce,
            m,
            n,
            sampler: SamplerConfig::default(),
            fixed_atoms: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::Config("estimator: m must be >= 1".into()));
        }
        if self.kind == EstimatorKind::UeegMcmc {
            self.sampler.validate()?;
        }
        Ok(())
    }

    /// One gradient estimate at the simulator's current design.
    pub fn estimate<M: Model, R: Rng + ?Sized>(
        &self,
        sim: &mut Simulator<'_, M>,
        rng: &mut R,
        atoms: Option<&OuterBatch>,
    ) -> Result<GradEstimate> {
        match self.kind {
            EstimatorKind::UeegMcmc => ueeg_mcmc_gradient(sim, self.m, &self.sampler, rng),
            EstimatorKind::BeegAp => match atoms {
                Some(batch) => beeg_ap_gradient_on(sim, batch),
                None => beeg_ap_gradient(sim, self.m, rng),
            },
            EstimatorKind::Pce => pce_gradient(sim, self.m, self.n, rng),
        }
    }
}

fn add_tangent(acc: &mut [f64], d: &Dual, scale: f64) {
    for (a, t) in acc.iter_mut().zip(d.tangent()) {
        *a += scale * t;
    }
}

/// Unbiased (given exact posterior draws) EIG-gradient estimate.
///
/// For each outer sample, a chain targeting `q(θ'|yᵢ, λ)` is started at the
/// generating `θᵢ`, which is an exact posterior draw for `yᵢ`.
pub fn ueeg_mcmc_gradient<M: Model, R: Rng + ?Sized>(
    sim: &mut Simulator<'_, M>,
    m: usize,
    sampler: &SamplerConfig,
    rng: &mut R,
) -> Result<GradEstimate> {
    if m == 0 {
        return Err(Error::Estimator("UEEG-MCMC needs M >= 1".into()));
    }
    let model = sim.model();
    let d = sim.design().len();
    let before = sim.budget().forward_evals();
    let mut grad = vec![0.0; d];
    let mut inner_n = 0;
    for (i, mut r) in split(rng, m).into_iter().enumerate() {
        let theta = model.sample_prior(&mut r);
        let noise = model.sample_noise(&mut r);
        let y = sim.simulate(&theta, &noise)?;
        let own = sim.log_likelihood(&y, &theta)?;
        let y_plain: Vec<f64> = y.iter().map(Dual::value).collect();
        let chain = posterior_chain(sim, &y_plain, &theta, sampler, &mut r)
            .map_err(|e| Error::Estimator(format!("outer sample {i}: {e}")))?;
        inner_n = chain.draws.len();
        add_tangent(&mut grad, &own, 1.0);
        let w = 1.0 / chain.draws.len() as f64;
        for draw in &chain.draws {
            let other = sim.log_likelihood(&y, draw)?;
            add_tangent(&mut grad, &other, -w);
        }
    }
    for g in grad.iter_mut() {
        *g /= m as f64;
    }
    finish(grad, m, inner_n, sim.budget().forward_evals() - before)
}

/// BEEG-AP on a fresh batch of `M` prior/noise samples.
pub fn beeg_ap_gradient<M: Model, R: Rng + ?Sized>(
    sim: &mut Simulator<'_, M>,
    m: usize,
    rng: &mut R,
) -> Result<GradEstimate> {
    if m == 0 {
        return Err(Error::Estimator("BEEG-AP needs M >= 1".into()));
    }
    let batch = OuterBatch::draw(sim.model(), m, rng);
    beeg_ap_gradient_on(sim, &batch)
}

/// BEEG-AP on a given batch:
/// `(1/M) Σᵢ Σⱼ wᵢⱼ ∇ log[l(yᵢ|θᵢ)/l(yᵢ|θⱼ)]`, `wᵢⱼ ∝ l(yᵢ|θⱼ)`.
///
/// Weights are a log-space softmax on plain values; the result equals the
/// gradient of srNMC on the same batch. Costs exactly `M` forward evaluations.
///
/// The likelihood factorizes over observations, so each pair `(i, j)` needs
/// only scalar partials `∂/∂y` and `∂/∂f`; they are folded into per-sample
/// coefficients and contracted with the design tangents of `yᵢ` and `fⱼ`
/// once, which keeps the tangent work linear in `M`.
pub fn beeg_ap_gradient_on<M: Model>(sim: &mut Simulator<'_, M>, batch: &OuterBatch) -> Result<GradEstimate> {
    let model = sim.model();
    let m = batch.len();
    if m == 0 {
        return Err(Error::Estimator("BEEG-AP needs M >= 1".into()));
    }
    let d = sim.design().len();
    let before = sim.budget().forward_evals();
    let forwards = batch
        .thetas
        .iter()
        .map(|t| sim.forward_dual_once(t))
        .collect::<Result<Vec<_>>>()?;
    let obs = forwards[0].len();
    let plain: Vec<Vec<f64>> = forwards
        .iter()
        .map(|f| f.iter().map(Dual::value).collect())
        .collect();
    // Coefficients of ∂f_jt/∂λ, accumulated over all rows.
    let mut coef_f = vec![0.0; m * obs];
    let mut coef_y = vec![0.0; obs];
    let mut dy = vec![0.0; m * obs];
    let mut df = vec![0.0; m * obs];
    let mut logits = vec![0.0; m];
    let mut grad = vec![0.0; d];
    for i in 0..m {
        let y = model.observe(&plain[i], &batch.noises[i]);
        for j in 0..m {
            let mut acc = 0.0;
            for t in 0..obs {
                let (v, gy, gf) = model.obs_log_density_partials(y[t], plain[j][t]);
                acc += v;
                dy[j * obs + t] = gy;
                df[j * obs + t] = gf;
            }
            logits[j] = sanitize_log_likelihood(acc);
        }
        let lse = log_sum_exp(&logits);
        if lse == f64::NEG_INFINITY {
            return Err(Error::Estimator(format!(
                "outer sample {i}: every atom has zero likelihood"
            )));
        }
        coef_y.iter_mut().for_each(|c| *c = 0.0);
        let mut fold = |j: usize, w: f64| {
            for t in 0..obs {
                coef_y[t] += w * dy[j * obs + t];
                coef_f[j * obs + t] += w * df[j * obs + t];
            }
        };
        if logits[i] > f64::NEG_INFINITY {
            fold(i, 1.0);
        }
        for j in 0..m {
            let w = (logits[j] - lse).exp();
            if w > 0.0 {
                fold(j, -w);
            }
        }
        let y_dual = model.observe(&forwards[i], &batch.noises[i]);
        for (c, yt) in coef_y.iter().zip(&y_dual) {
            add_tangent(&mut grad, yt, *c);
        }
    }
    for (j, f) in forwards.iter().enumerate() {
        for (t, ft) in f.iter().enumerate() {
            add_tangent(&mut grad, ft, coef_f[j * obs + t]);
        }
    }
    for g in grad.iter_mut() {
        *g /= m as f64;
    }
    finish(grad, m, m, sim.budget().forward_evals() - before)
}

/// Reparameterized gradient of the PCE bound. Costs `M(N+1)`.
pub fn pce_gradient<M: Model, R: Rng + ?Sized>(
    sim: &mut Simulator<'_, M>,
    m: usize,
    n: usize,
    rng: &mut R,
) -> Result<GradEstimate> {
    if m == 0 {
        return Err(Error::Estimator("PCE needs M >= 1".into()));
    }
    let batch = NestedBatch::draw(sim.model(), m, n, rng);
    pce_gradient_on(sim, &batch)
}

pub fn pce_gradient_on<M: Model>(sim: &mut Simulator<'_, M>, batch: &NestedBatch) -> Result<GradEstimate> {
    let before = sim.budget().forward_evals();
    let terms = pce_terms::<M, Dual>(sim, batch)?;
    let n = batch.inner.first().map_or(0, Vec::len);
    finish(
        terms.mean().tangent().to_vec(),
        batch.outer.len(),
        n,
        sim.budget().forward_evals() - before,
    )
}

fn finish(gradient: Vec<f64>, outer_m: usize, inner_n: usize, evals: u64) -> Result<GradEstimate> {
    if let Some(k) = gradient.iter().position(|g| !g.is_finite()) {
        return Err(Error::Estimator(format!("non-finite gradient component {k}")));
    }
    Ok(GradEstimate { gradient, outer_m, inner_n, forward_evals_used: evals })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eig_est::srnmc_terms;
    use crate::model::{LinearModel, ToyModel};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_atom_gradient_vanishes() {
        let model = ToyModel::large_noise();
        let mut sim = Simulator::new(&model, &[0.3, 0.6]).unwrap();
        let g = beeg_ap_gradient(&mut sim, 1, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(g.gradient, vec![0.0, 0.0]);
    }

    #[test]
    fn pce_without_contrast_has_zero_gradient() {
        let model = LinearModel::new(3, 1.0).unwrap();
        let mut sim = Simulator::new(&model, &[0.1, -0.5, 0.8]).unwrap();
        let g = pce_gradient(&mut sim, 20, 0, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(g.gradient, vec![0.0; 3]);
        assert_eq!(g.forward_evals_used, 20);
    }

    #[test]
    fn beeg_ap_is_srnmc_gradient_on_the_same_batch() {
        let model = ToyModel::large_noise();
        let mut sim = Simulator::new(&model, &[0.35, 0.8]).unwrap();
        let batch = OuterBatch::draw(&model, 64, &mut ChaCha8Rng::seed_from_u64(3));
        let g = beeg_ap_gradient_on(&mut sim, &batch).unwrap();
        assert_eq!(g.forward_evals_used, 64);
        let reference = srnmc_terms::<_, Dual>(&mut sim, &batch).unwrap().mean();
        for (a, b) in g.gradient.iter().zip(reference.tangent()) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1e-300), "{a} vs {b}");
        }
    }

    #[test]
    fn ueeg_is_reproducible() {
        let model = LinearModel::new(2, 1.0).unwrap();
        let run = || {
            let mut sim = Simulator::new(&model, &[0.2, 0.9]).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            ueeg_mcmc_gradient(&mut sim, 1, &SamplerConfig::exact(1), &mut rng).unwrap()
        };
        let a = run();
        assert_eq!(a, run());
        assert_eq!((a.outer_m, a.inner_n), (1, 1));
    }

    #[test]
    fn ueeg_slice_cost_is_bounded() {
        let model = ToyModel::large_noise();
        let mut sim = Simulator::new(&model, &[0.4, 1.0]).unwrap();
        let cfg = SamplerConfig::slice(5, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = ueeg_mcmc_gradient(&mut sim, 10, &cfg, &mut rng).unwrap();
        assert!(g.gradient.iter().all(|v| v.is_finite()));
        assert!(g.forward_evals_used >= 10);
    }

    #[test]
    fn estimator_config_dispatch() {
        let model = ToyModel::large_noise();
        let mut sim = Simulator::new(&model, &[0.4, 1.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let cfg = EstimatorConfig::pce(4, 3);
        let g = cfg.estimate(&mut sim, &mut rng, None).unwrap();
        assert_eq!(g.forward_evals_used, 16);
        assert!(EstimatorConfig::beeg_ap(0).validate().is_err());
    }
}
