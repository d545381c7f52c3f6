//! EIG value estimators: nested Monte Carlo (NMC), sample-reuse NMC (srNMC)
//! and prior contrastive estimation (PCE).
//!
//! Each estimator has a batch form, generic over [`Scalar`], that works on
//! explicitly supplied parameter/noise samples. Evaluating the batch form
//! with duals gives the reparameterized gradient on common random numbers.

use rand::Rng;

use crate::dual::{log_sum_exp, Dual, Scalar};
use crate::error::{Error, Result};
use crate::model::{Model, NoiseDraw, Simulator, Theta};

/// An EIG estimate in nats.
#[derive(Debug, Clone, PartialEq)]
pub struct EigEstimate {
    pub value: f64,
    /// Standard deviation of the outer log-ratio terms over `√M`; ignores
    /// the inner-loop bias.
    pub std_error: f64,
    pub outer_m: usize,
    pub inner_n: usize,
    pub forward_evals_used: u64,
}

/// Outer samples `(θᵢ, εᵢ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OuterBatch {
    pub thetas: Vec<Theta>,
    pub noises: Vec<NoiseDraw>,
}

impl OuterBatch {
    pub fn draw<M: Model, R: Rng + ?Sized>(model: &M, m: usize, rng: &mut R) -> Self {
        let mut thetas = Vec::with_capacity(m);
        let mut noises = Vec::with_capacity(m);
        for _ in 0..m {
            thetas.push(model.sample_prior(rng));
            noises.push(model.sample_noise(rng));
        }
        OuterBatch { thetas, noises }
    }

    pub fn len(&self) -> usize {
        self.thetas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.is_empty()
    }
}

/// Outer samples plus contrastive inner parameter samples per outer index.
#[derive(Debug, Clone, PartialEq)]
pub struct NestedBatch {
    pub outer: OuterBatch,
    pub inner: Vec<Vec<Theta>>,
}

impl NestedBatch {
    pub fn draw<M: Model, R: Rng + ?Sized>(model: &M, m: usize, n: usize, rng: &mut R) -> Self {
        let outer = OuterBatch::draw(model, m, rng);
        let inner = (0..m)
            .map(|_| (0..n).map(|_| model.sample_prior(rng)).collect())
            .collect();
        NestedBatch { outer, inner }
    }
}

/// Per-outer log-ratio terms `log l(yᵢ|θᵢ) − log Σⱼ l(yᵢ|θᵢⱼ)`; the estimate
/// is their mean plus `offset` (the log of the inner sample count).
///
/// For srNMC and PCE every term is `≤ 0` in floating point, so the estimate
/// never exceeds `offset`.
#[derive(Debug, Clone)]
pub struct LogRatioTerms<S> {
    pub terms: Vec<S>,
    pub offset: f64,
}

impl<S: Scalar> LogRatioTerms<S> {
    pub fn mean(&self) -> S {
        let m = self.terms.len() as f64;
        let mut acc = self.terms[0].lift(0.0);
        for t in &self.terms {
            acc = acc + t.clone();
        }
        acc / m + self.offset
    }

    pub fn std_error(&self) -> f64 {
        let m = self.terms.len();
        if m < 2 {
            return 0.0;
        }
        let mean = self.terms.iter().map(Scalar::value).sum::<f64>() / m as f64;
        let var = self
            .terms
            .iter()
            .map(|t| (t.value() - mean).powi(2))
            .sum::<f64>()
            / (m - 1) as f64;
        (var / m as f64).sqrt()
    }
}

/// Forward output at the simulator's design, as plain or dual scalars.
pub trait SimScalar: Scalar {
    fn forward<M: Model>(sim: &mut Simulator<'_, M>, theta: &[f64]) -> Result<Vec<Self>>;
    fn forward_once<M: Model>(sim: &mut Simulator<'_, M>, theta: &[f64]) -> Result<Vec<Self>>;
}

impl SimScalar for f64 {
    fn forward<M: Model>(sim: &mut Simulator<'_, M>, theta: &[f64]) -> Result<Vec<f64>> {
        sim.forward(theta)
    }
    fn forward_once<M: Model>(sim: &mut Simulator<'_, M>, theta: &[f64]) -> Result<Vec<f64>> {
        sim.forward_once(theta)
    }
}

impl SimScalar for Dual {
    fn forward<M: Model>(sim: &mut Simulator<'_, M>, theta: &[f64]) -> Result<Vec<Dual>> {
        sim.forward_dual(theta)
    }
    fn forward_once<M: Model>(sim: &mut Simulator<'_, M>, theta: &[f64]) -> Result<Vec<Dual>> {
        sim.forward_dual_once(theta)
    }
}

fn ll<M: Model, S: Scalar>(model: &M, y: &[S], f: &[S]) -> S {
    crate::model::sanitize_log_likelihood(model.log_likelihood_given(y, f))
}

fn check_row<S: Scalar>(lse: &S, i: usize) -> Result<()> {
    if lse.value() == f64::NEG_INFINITY {
        Err(Error::Estimator(format!(
            "outer sample {i}: no contrastive parameter has positive likelihood"
        )))
    } else {
        Ok(())
    }
}

/// srNMC log-ratio terms on a batch: the batch serves as both the outer
/// samples and the atomic prior for every inner average. Costs exactly
/// `M` forward evaluations.
pub fn srnmc_terms<M: Model, S: SimScalar>(
    sim: &mut Simulator<'_, M>,
    batch: &OuterBatch,
) -> Result<LogRatioTerms<S>> {
    let model = sim.model();
    let m = batch.len();
    if m == 0 {
        return Err(Error::Estimator("srNMC needs M >= 1".into()));
    }
    let forwards = batch
        .thetas
        .iter()
        .map(|t| S::forward_once(sim, t))
        .collect::<Result<Vec<_>>>()?;
    let ln_m = (m as f64).ln();
    let mut terms = Vec::with_capacity(m);
    let mut row = Vec::with_capacity(m);
    for i in 0..m {
        let y = model.observe(&forwards[i], &batch.noises[i]);
        row.clear();
        for f in &forwards {
            row.push(ll(model, &y, f));
        }
        let lse = log_sum_exp(&row);
        check_row(&lse, i)?;
        terms.push(row[i].clone() - lse);
    }
    Ok(LogRatioTerms { terms, offset: ln_m })
}

/// PCE log-ratio terms: the inner sum over `{θᵢ} ∪ inner[i]` with weight
/// `1/(N+1)`. Costs `M(N+1)` forward evaluations.
pub fn pce_terms<M: Model, S: SimScalar>(
    sim: &mut Simulator<'_, M>,
    batch: &NestedBatch,
) -> Result<LogRatioTerms<S>> {
    contrastive_terms(sim, batch, true)
}

/// NMC log-ratio terms with independent inner samples. Costs `M(N+1)`.
pub fn nmc_terms<M: Model, S: SimScalar>(
    sim: &mut Simulator<'_, M>,
    batch: &NestedBatch,
) -> Result<LogRatioTerms<S>> {
    contrastive_terms(sim, batch, false)
}

fn contrastive_terms<M: Model, S: SimScalar>(
    sim: &mut Simulator<'_, M>,
    batch: &NestedBatch,
    include_outer: bool,
) -> Result<LogRatioTerms<S>> {
    let model = sim.model();
    let m = batch.outer.len();
    if m == 0 {
        return Err(Error::Estimator("estimator needs M >= 1".into()));
    }
    let mut terms = Vec::with_capacity(m);
    let mut row = Vec::new();
    let mut count = 0;
    for i in 0..m {
        let f_i = S::forward_once(sim, &batch.outer.thetas[i])?;
        let y = model.observe(&f_i, &batch.outer.noises[i]);
        let own = ll(model, &y, &f_i);
        row.clear();
        if include_outer {
            row.push(own.clone());
        }
        for theta in &batch.inner[i] {
            let f = S::forward_once(sim, theta)?;
            row.push(ll(model, &y, &f));
        }
        if row.is_empty() {
            return Err(Error::Estimator("NMC needs N >= 1".into()));
        }
        let lse = log_sum_exp(&row);
        check_row(&lse, i)?;
        count = row.len();
        terms.push(own - lse);
    }
    Ok(LogRatioTerms { terms, offset: (count as f64).ln() })
}

fn estimate<S: Scalar>(terms: &LogRatioTerms<S>, m: usize, n: usize, evals: u64) -> EigEstimate {
    EigEstimate {
        value: terms.mean().value(),
        std_error: terms.std_error(),
        outer_m: m,
        inner_n: n,
        forward_evals_used: evals,
    }
}

/// Naïve nested Monte Carlo EIG estimate.
pub fn nmc_value<M: Model, R: Rng + ?Sized>(
    sim: &mut Simulator<'_, M>,
    m: usize,
    n: usize,
    rng: &mut R,
) -> Result<EigEstimate> {
    if m == 0 || n == 0 {
        return Err(Error::Estimator("NMC needs M, N >= 1".into()));
    }
    let batch = NestedBatch::draw(sim.model(), m, n, rng);
    let before = sim.budget().forward_evals();
    let terms = nmc_terms::<M, f64>(sim, &batch)?;
    Ok(estimate(&terms, m, n, sim.budget().forward_evals() - before))
}

/// Sample-reuse NMC on a fresh batch. Never exceeds `ln M`.
pub fn srnmc_value<M: Model, R: Rng + ?Sized>(
    sim: &mut Simulator<'_, M>,
    m: usize,
    rng: &mut R,
) -> Result<EigEstimate> {
    let batch = OuterBatch::draw(sim.model(), m, rng);
    srnmc_value_on(sim, &batch)
}

pub fn srnmc_value_on<M: Model>(sim: &mut Simulator<'_, M>, batch: &OuterBatch) -> Result<EigEstimate> {
    let before = sim.budget().forward_evals();
    let terms = srnmc_terms::<M, f64>(sim, batch)?;
    Ok(estimate(&terms, batch.len(), batch.len(), sim.budget().forward_evals() - before))
}

/// PCE on a fresh batch. Never exceeds `ln(N + 1)`.
pub fn pce_value<M: Model, R: Rng + ?Sized>(
    sim: &mut Simulator<'_, M>,
    m: usize,
    n: usize,
    rng: &mut R,
) -> Result<EigEstimate> {
    let batch = NestedBatch::draw(sim.model(), m, n, rng);
    pce_value_on(sim, &batch)
}

pub fn pce_value_on<M: Model>(sim: &mut Simulator<'_, M>, batch: &NestedBatch) -> Result<EigEstimate> {
    let before = sim.budget().forward_evals();
    let n = batch.inner.first().map_or(0, Vec::len);
    let terms = pce_terms::<M, f64>(sim, batch)?;
    Ok(estimate(&terms, batch.outer.len(), n, sim.budget().forward_evals() - before))
}
