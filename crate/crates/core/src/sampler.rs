//! Posterior samplers: coordinate-wise slice sampling, adaptive random-walk
//! Metropolis–Hastings, and exact draws for conjugate models.
//!
//! Chains run in the model's unconstrained coordinates and return draws in
//! θ-space. There is no burn-in: posterior chains start from a draw that is
//! already exact for the observation being conditioned on, so thinning only
//! controls autocorrelation.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Model, Simulator, Theta};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    Slice,
    AdaptiveMh,
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    /// Transitions between kept draws.
    pub thinning: usize,
    pub n_samples: usize,
    /// Slice width as a multiple of the per-coordinate prior scale.
    pub slice_width: f64,
    pub slice_max_stepout: usize,
    /// Accepted proposals before the MH proposal covariance adapts.
    pub mh_adapt_start: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            kind: SamplerKind::Slice,
            thinning: 2,
            n_samples: 10,
            slice_width: 1.0,
            slice_max_stepout: 10,
            mh_adapt_start: 10,
        }
    }
}

impl SamplerConfig {
    /// Slice sampling, 10 draws, thinning 2.
    pub fn slice(n_samples: usize, thinning: usize) -> Self {
        SamplerConfig { kind: SamplerKind::Slice, n_samples, thinning, ..Default::default() }
    }

    /// Adaptive MH keeping one draw after 95 transitions.
    pub fn adaptive_mh(n_samples: usize, thinning: usize) -> Self {
        SamplerConfig { kind: SamplerKind::AdaptiveMh, n_samples, thinning, ..Default::default() }
    }

    pub fn exact(n_samples: usize) -> Self {
        SamplerConfig { kind: SamplerKind::Exact, n_samples, thinning: 1, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.thinning == 0 || self.n_samples == 0 {
            return Err(Error::Config("sampler: thinning and n_samples must be positive".into()));
        }
        if !(self.slice_width > 0.0 && self.slice_width.is_finite()) {
            return Err(Error::Config("sampler: slice_width must be positive".into()));
        }
        if self.slice_max_stepout == 0 || self.mh_adapt_start == 0 {
            return Err(Error::Config(
                "sampler: slice_max_stepout and mh_adapt_start must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Ordered draws of one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    pub draws: Vec<Vec<f64>>,
    /// Metropolis acceptance rate; 1 for slice and exact draws.
    pub accept_rate: f64,
    pub thinning: usize,
    pub n_target_evals: u64,
}

/// One univariate slice-sampling update with stepping out and shrinkage.
///
/// `fx0` is `f(x0)`, which must be finite. Returns the new point and its
/// log density. Stepping out places at most `max_stepout` unit widths
/// around `x0` and shrinks from there.
pub fn slice_update_1d<F, R>(
    mut f: F,
    x0: f64,
    fx0: f64,
    width: f64,
    max_stepout: usize,
    rng: &mut R,
) -> (f64, f64)
where
    F: FnMut(f64) -> f64,
    R: Rng + ?Sized,
{
    debug_assert!(fx0.is_finite());
    let level = fx0 - rng.sample::<f64, _>(Exp1);
    let mut left = x0 - width * rng.random::<f64>();
    let mut right = left + width;
    let mut j = (max_stepout as f64 * rng.random::<f64>()).floor() as usize;
    let mut k = max_stepout.saturating_sub(1).saturating_sub(j);
    while j > 0 && f(left) > level {
        left -= width;
        j -= 1;
    }
    while k > 0 && f(right) > level {
        right += width;
        k -= 1;
    }
    // Shrinkage; the interval always contains x0.
    for _ in 0..200 {
        let x1 = left + (right - left) * rng.random::<f64>();
        let fx1 = f(x1);
        if fx1 > level {
            return (x1, fx1);
        }
        if x1 < x0 {
            left = x1;
        } else {
            right = x1;
        }
    }
    (x0, fx0)
}

/// Haario-style adaptive random-walk Metropolis state.
#[derive(Debug, Clone)]
pub struct AdaptiveMh {
    current: Vec<f64>,
    current_lp: f64,
    mean: DVector<f64>,
    scatter: DMatrix<f64>,
    n_seen: usize,
    accepted: usize,
    proposed: usize,
    adapt_start: usize,
}

const MH_INIT_SD: f64 = 0.1;
const MH_JITTER: f64 = 1e-6;

impl AdaptiveMh {
    pub fn new(init: &[f64], init_lp: f64, adapt_start: usize) -> Self {
        let d = init.len();
        AdaptiveMh {
            current: init.to_vec(),
            current_lp: init_lp,
            mean: DVector::from_column_slice(init),
            scatter: DMatrix::zeros(d, d),
            n_seen: 1,
            accepted: 0,
            proposed: 0,
            adapt_start,
        }
    }

    pub fn current(&self) -> &[f64] {
        &self.current
    }

    pub fn current_lp(&self) -> f64 {
        self.current_lp
    }

    pub fn accept_rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    pub fn is_adapting(&self) -> bool {
        self.accepted >= self.adapt_start
    }

    /// Streaming estimate of the target covariance.
    pub fn covariance(&self) -> DMatrix<f64> {
        if self.n_seen < 2 {
            return DMatrix::zeros(self.current.len(), self.current.len());
        }
        &self.scatter / (self.n_seen - 1) as f64
    }

    fn proposal_factor(&self) -> DMatrix<f64> {
        let d = self.current.len();
        if self.is_adapting() {
            let scale = 2.38 * 2.38 / d as f64;
            let cov = self.covariance() * scale + DMatrix::identity(d, d) * MH_JITTER;
            if let Some(ch) = cov.cholesky() {
                return ch.l();
            }
        }
        DMatrix::identity(d, d) * MH_INIT_SD
    }

    fn record(&mut self) {
        self.n_seen += 1;
        let x = DVector::from_column_slice(&self.current);
        let delta = &x - &self.mean;
        self.mean += &delta / self.n_seen as f64;
        let delta2 = &x - &self.mean;
        self.scatter += &delta * delta2.transpose();
    }

    /// One proposal, one target evaluation.
    pub fn step<F, R>(&mut self, log_target: &mut F, rng: &mut R)
    where
        F: FnMut(&[f64]) -> f64,
        R: Rng + ?Sized,
    {
        let d = self.current.len();
        let factor = self.proposal_factor();
        let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let step = factor * z;
        let proposal: Vec<f64> = self.current.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
        let lp = log_target(&proposal);
        self.proposed += 1;
        let log_u = rng.random::<f64>().ln();
        if lp.is_finite() && log_u < lp - self.current_lp {
            self.current = proposal;
            self.current_lp = lp;
            self.accepted += 1;
        }
        self.record();
    }
}

/// Run a chain on an unconstrained log target starting at `init`.
///
/// `scales` sets the per-coordinate slice widths (times `cfg.slice_width`).
/// Returns `cfg.n_samples` draws, keeping every `cfg.thinning`-th state.
pub fn run_chain<F, R>(
    mut log_target: F,
    init: &[f64],
    scales: &[f64],
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<Chain>
where
    F: FnMut(&[f64]) -> f64,
    R: Rng + ?Sized,
{
    cfg.validate()?;
    let mut evals = 0u64;
    let mut counted = |x: &[f64]| {
        evals += 1;
        log_target(x)
    };
    let lp0 = counted(init);
    if !lp0.is_finite() {
        return Err(Error::Sampler(format!("log target at init {init:?} is {lp0}")));
    }
    let total = cfg.n_samples * cfg.thinning;
    let mut draws = Vec::with_capacity(cfg.n_samples);
    let accept_rate = match cfg.kind {
        SamplerKind::Slice => {
            let mut x = init.to_vec();
            let mut fx = lp0;
            let mut order: Vec<usize> = (0..x.len()).collect();
            for t in 0..total {
                order.shuffle(rng);
                for &c in &order {
                    let width = cfg.slice_width * scales[c];
                    let mut probe = x.clone();
                    let (xc, fc) = slice_update_1d(
                        |v| {
                            probe[c] = v;
                            counted(&probe)
                        },
                        x[c],
                        fx,
                        width,
                        cfg.slice_max_stepout,
                        rng,
                    );
                    x[c] = xc;
                    fx = fc;
                }
                if (t + 1) % cfg.thinning == 0 {
                    draws.push(x.clone());
                }
            }
            1.0
        }
        SamplerKind::AdaptiveMh => {
            let mut mh = AdaptiveMh::new(init, lp0, cfg.mh_adapt_start);
            for t in 0..total {
                mh.step(&mut counted, rng);
                if (t + 1) % cfg.thinning == 0 {
                    draws.push(mh.current().to_vec());
                }
            }
            mh.accept_rate()
        }
        SamplerKind::Exact => {
            return Err(Error::Sampler(
                "exact sampling needs a model with a conjugate posterior".into(),
            ))
        }
    };
    Ok(Chain { draws, accept_rate, thinning: cfg.thinning, n_target_evals: evals })
}

/// Posterior draws of θ given `y` at the simulator's design, starting from
/// `init` (θ-space). Likelihood evaluations go through `sim` and are charged
/// to its budget.
pub fn posterior_chain<M: Model, R: Rng + ?Sized>(
    sim: &mut Simulator<'_, M>,
    y: &[f64],
    init: &[f64],
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<Chain> {
    let model = sim.model();
    if cfg.kind == SamplerKind::Exact {
        cfg.validate()?;
        let design = sim.design().to_vec();
        let draws = (0..cfg.n_samples)
            .map(|_| {
                model.exact_posterior(y, &design, rng).ok_or_else(|| {
                    Error::Sampler(format!("model `{}` has no exact posterior sampler", model.name()))
                })
            })
            .collect::<Result<Vec<Theta>>>()?;
        return Ok(Chain { draws, accept_rate: 1.0, thinning: 1, n_target_evals: 0 });
    }
    let z0 = model.to_unconstrained(init);
    let scales = model.unconstrained_scale();
    let mut failure = None;
    let chain = run_chain(
        |z| {
            let lp = model.log_prior_unconstrained(z);
            if !lp.is_finite() {
                return f64::NEG_INFINITY;
            }
            let theta = model.from_unconstrained(z);
            match sim.log_likelihood_f64(y, &theta) {
                Ok(ll) => lp + ll,
                Err(e) => {
                    failure.get_or_insert(e);
                    f64::NEG_INFINITY
                }
            }
        },
        &z0,
        &scales,
        cfg,
        rng,
    );
    if let Some(e) = failure {
        log::debug!("posterior chain rejected a failing proposal: {e}");
    }
    let mut chain = chain?;
    for d in chain.draws.iter_mut() {
        *d = model.from_unconstrained(d);
    }
    Ok(chain)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn std_normal(x: &[f64]) -> f64 {
        -0.5 * x.iter().map(|v| v * v).sum::<f64>()
    }

    #[test]
    fn slice_stays_in_narrow_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let target = |x: f64| if (0.5..0.5001).contains(&x) { 0.0 } else { f64::NEG_INFINITY };
        let mut x = 0.50005;
        for _ in 0..1000 {
            let (nx, fx) = slice_update_1d(target, x, 0.0, 1.0, 10, &mut rng);
            assert!((0.5..0.5001).contains(&nx));
            assert_eq!(fx, 0.0);
            x = nx;
        }
    }

    #[test]
    fn slice_wide_width_terminates() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut evals = 0;
        let (x, _) = slice_update_1d(
            |v| {
                evals += 1;
                if (0.0..=1.0).contains(&v) { 0.0 } else { f64::NEG_INFINITY }
            },
            0.3,
            0.0,
            1e6,
            5,
            &mut rng,
        );
        assert!((0.0..=1.0).contains(&x));
        assert!(evals <= 5 + 200);
    }

    #[test]
    fn higher_target_always_accepted() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let mut mh = AdaptiveMh::new(&[0.0], -10.0, 10);
            mh.step(&mut |_: &[f64]| 0.0, &mut rng);
            assert_eq!(mh.accept_rate(), 1.0);
        }
    }

    #[test]
    fn nonfinite_init_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = SamplerConfig::slice(5, 1);
        let r = run_chain(|_| f64::NEG_INFINITY, &[0.0], &[1.0], &cfg, &mut rng);
        assert!(matches!(r, Err(Error::Sampler(_))));
    }

    #[test]
    fn chain_shape_and_determinism() {
        let cfg = SamplerConfig::slice(7, 3);
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            run_chain(std_normal, &[0.1, -0.2], &[1.0, 1.0], &cfg, &mut rng).unwrap()
        };
        let a = run(9);
        assert_eq!(a.draws.len(), 7);
        assert_eq!(a.thinning, 3);
        assert!(a.n_target_evals > 7 * 3 * 2);
        assert_eq!(a, run(9));
        let mh = SamplerConfig::adaptive_mh(4, 95);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c = run_chain(std_normal, &[0.0], &[1.0], &mh, &mut rng).unwrap();
        assert_eq!(c.draws.len(), 4);
        assert_eq!(c.n_target_evals, 1 + 4 * 95);
    }
}
