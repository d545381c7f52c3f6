//! Design validation: high-sample NMC, KDE posterior-entropy scoring and the
//! gradient bias study on the linear model.

use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eig_est::{nmc_value, EigEstimate};
use crate::error::{Error, Result};
use crate::grad_est::EstimatorConfig;
use crate::model::{sample_path, LinearModel, Model, Simulator};
use crate::report::{indexed, real, reals, write_csv};
use crate::rng::SeedStream;
use crate::sampler::{posterior_chain, SamplerConfig};
use crate::stats::mean_se;

/// Smallest KDE bandwidth; degenerate samples are floored here.
pub const MIN_BANDWIDTH: f64 = 1e-8;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_7;

/// Gaussian product-kernel density estimate with per-dimension Silverman
/// bandwidths `h_d = σ̂_d (4 / ((D + 2) n))^{1/(D+4)}`.
#[derive(Debug, Clone)]
pub struct Kde {
    points: Vec<Vec<f64>>,
    bandwidths: Vec<f64>,
    log_norm: f64,
}

impl Kde {
    pub fn fit(points: Vec<Vec<f64>>) -> Result<Self> {
        let n = points.len();
        if n < 2 {
            return Err(Error::Estimator("KDE needs at least 2 samples".into()));
        }
        let dim = points[0].len();
        let factor = (4.0 / ((dim as f64 + 2.0) * n as f64)).powf(1.0 / (dim as f64 + 4.0));
        let bandwidths: Vec<f64> = (0..dim)
            .map(|d| {
                let col: Vec<f64> = points.iter().map(|p| p[d]).collect();
                let (_, se) = mean_se(&col);
                let sd = se * (n as f64).sqrt();
                let h = sd * factor;
                if h < MIN_BANDWIDTH || !h.is_finite() {
                    log::warn!("KDE dimension {d}: bandwidth {h} floored at {MIN_BANDWIDTH}");
                    MIN_BANDWIDTH
                } else {
                    h
                }
            })
            .collect();
        let log_norm = -(n as f64).ln() - bandwidths.iter().map(|h| h.ln() + LN_SQRT_2PI).sum::<f64>();
        Ok(Kde { points, bandwidths, log_norm })
    }

    pub fn bandwidths(&self) -> &[f64] {
        &self.bandwidths
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let mut best = f64::NEG_INFINITY;
        let mut exps = Vec::with_capacity(self.points.len());
        for p in &self.points {
            let q: f64 = p
                .iter()
                .zip(x)
                .zip(&self.bandwidths)
                .map(|((a, b), h)| ((a - b) / h).powi(2))
                .sum();
            let e = -0.5 * q;
            best = best.max(e);
            exps.push(e);
        }
        let s: f64 = exps.iter().map(|e| (e - best).exp()).sum();
        best + s.ln() + self.log_norm
    }

    /// Resubstitution entropy `−(1/n) Σᵢ log p̂(xᵢ)`.
    pub fn resubstitution_entropy(&self) -> f64 {
        -self.points.iter().map(|p| self.log_density(p)).sum::<f64>() / self.points.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntropyReport {
    pub mean_entropy: f64,
    pub std_error: f64,
    pub trials: usize,
    pub kde_samples: usize,
    /// Per-dimension bandwidth averaged over trials.
    pub bandwidths: Vec<f64>,
    pub entropies: Vec<f64>,
    /// Coordinates the entropies are measured in.
    pub space: &'static str,
}

impl EntropyReport {
    /// `trial,entropy` rows, then `mean` and `se` footer rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let header = vec!["trial".to_string(), "entropy".to_string()];
        let mut rows: Vec<Vec<String>> = self
            .entropies
            .iter()
            .enumerate()
            .map(|(t, h)| vec![t.to_string(), real(*h)])
            .collect();
        rows.push(vec!["mean".into(), real(self.mean_entropy)]);
        rows.push(vec!["se".into(), real(self.std_error)]);
        write_csv(path, &header, &rows)
    }
}

/// Mean entropy of posteriors given data simulated at `design`.
///
/// Trial `t` draws `θ*`, `ε` from stream `("entropy", t)`, simulates `y`, runs
/// the sampler from `θ*` for `kde_n` draws and scores them by KDE. Trials run
/// in parallel; the result does not depend on the worker count.
pub fn posterior_entropy<M: Model>(
    model: &M,
    design: &[f64],
    trials: usize,
    sampler: &SamplerConfig,
    kde_n: usize,
    seeds: &SeedStream,
) -> Result<EntropyReport> {
    if trials == 0 || kde_n < 2 {
        return Err(Error::Config("entropy: need trials >= 1 and kde_n >= 2".into()));
    }
    let cfg = SamplerConfig { n_samples: kde_n, ..sampler.clone() };
    cfg.validate()?;
    let per_trial = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = seeds.rng("entropy", t as u64);
            let theta = model.sample_prior(&mut rng);
            let noise = model.sample_noise(&mut rng);
            let y = sample_path(model, &theta, &noise, design)?;
            let mut sim = Simulator::new(model, design)?;
            let chain = posterior_chain(&mut sim, &y, &theta, &cfg, &mut rng)?;
            let pts = chain.draws.iter().map(|d| model.entropy_coordinates(d)).collect();
            let kde = Kde::fit(pts)?;
            Ok((kde.resubstitution_entropy(), kde.bandwidths().to_vec()))
        })
        .collect::<Result<Vec<_>>>()?;
    let entropies: Vec<f64> = per_trial.iter().map(|(h, _)| *h).collect();
    let dim = per_trial[0].1.len();
    let bandwidths = (0..dim)
        .map(|d| per_trial.iter().map(|(_, b)| b[d]).sum::<f64>() / trials as f64)
        .collect();
    let (mean_entropy, std_error) = mean_se(&entropies);
    Ok(EntropyReport {
        mean_entropy,
        std_error,
        trials,
        kde_samples: kde_n,
        bandwidths,
        entropies,
        space: model.entropy_space(),
    })
}

/// Desk-scale default sample size for [`nmc_validate`].
pub const NMC_VALIDATE_DEFAULT: usize = 2000;

/// High-sample NMC estimate of the EIG at `design`.
pub fn nmc_validate<M: Model, R: Rng + ?Sized>(
    model: &M,
    design: &[f64],
    m: usize,
    n: usize,
    rng: &mut R,
) -> Result<EigEstimate> {
    let mut sim = Simulator::new(model, design)?;
    nmc_value(&mut sim, m, n, rng)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedEstimator {
    pub label: String,
    pub estimator: EstimatorConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BiasStudyConfig {
    pub sigma2: f64,
    pub design_dim: usize,
    pub n_designs: usize,
    pub replicates: usize,
    pub estimators: Vec<NamedEstimator>,
}

impl Default for BiasStudyConfig {
    /// 20 designs in `[−1, 1]³`, 100 replicates, each estimator costing about
    /// 100 forward evaluations except PCE at `100 × 101`.
    fn default() -> Self {
        let named = |label: &str, estimator| NamedEstimator { label: label.into(), estimator };
        BiasStudyConfig {
            sigma2: 0.1,
            design_dim: 3,
            n_designs: 20,
            replicates: 100,
            estimators: vec![
                named("beeg_ap", EstimatorConfig::beeg_ap(100)),
                named("ueeg_mcmc_exact", EstimatorConfig::ueeg_mcmc(50, SamplerConfig::exact(1))),
                named("ueeg_mcmc_slice", EstimatorConfig::ueeg_mcmc(10, SamplerConfig::slice(1, 2))),
                named("pce", EstimatorConfig::pce(100, 100)),
            ],
        }
    }
}

impl BiasStudyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_designs == 0 || self.replicates < 2 || self.design_dim == 0 {
            return Err(Error::Config(
                "bias study: need n_designs >= 1, replicates >= 2, design_dim >= 1".into(),
            ));
        }
        for e in &self.estimators {
            e.estimator.validate()?;
        }
        Ok(())
    }
}

/// One (design, estimator) row of the bias study.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasRow {
    pub design_id: usize,
    pub design: Vec<f64>,
    pub oracle_eig: f64,
    pub oracle_grad: Vec<f64>,
    pub estimator: String,
    pub mean_grad: Vec<f64>,
    /// Componentwise standard error of `mean_grad` over replicates.
    pub se_grad: Vec<f64>,
    pub bias_norm: f64,
    /// `‖se_grad‖₂`.
    pub se: f64,
}

impl BiasRow {
    pub fn bias(&self) -> Vec<f64> {
        self.mean_grad.iter().zip(&self.oracle_grad).map(|(a, b)| a - b).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiasReport {
    pub rows: Vec<BiasRow>,
}

impl BiasReport {
    pub fn for_estimator<'a>(&'a self, label: &'a str) -> impl Iterator<Item = &'a BiasRow> + 'a {
        self.rows.iter().filter(move |r| r.estimator == label)
    }

    /// `design_id,lambda_*,oracle_eig,oracle_grad_*,est,mean_grad_*,bias_norm,se`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let d = self.rows.first().map_or(0, |r| r.design.len());
        let mut header = vec!["design_id".to_string()];
        header.extend(indexed("lambda", d));
        header.push("oracle_eig".into());
        header.extend(indexed("oracle_grad", d));
        header.push("est".into());
        header.extend(indexed("mean_grad", d));
        header.extend(["bias_norm", "se"].map(String::from));
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                let mut row = vec![r.design_id.to_string()];
                row.extend(reals(&r.design));
                row.push(real(r.oracle_eig));
                row.extend(reals(&r.oracle_grad));
                row.push(r.estimator.clone());
                row.extend(reals(&r.mean_grad));
                row.push(real(r.bias_norm));
                row.push(real(r.se));
                row
            })
            .collect();
        write_csv(path, &header, &rows)
    }
}

/// Replicate-mean gradients of each estimator against the linear model's
/// analytic gradient at random designs in `[−1, 1]^d`.
///
/// Designs come from stream `("bias-designs", 0)`; replicate `r` of design
/// `k` and estimator `e` uses the child stream `("bias", k)` at
/// `(label_e, r)`. Designs run in parallel.
pub fn bias_study(cfg: &BiasStudyConfig, seeds: &SeedStream) -> Result<BiasReport> {
    cfg.validate()?;
    let model = LinearModel::new(cfg.design_dim, cfg.sigma2)?;
    let mut rng = seeds.rng("bias-designs", 0);
    let designs: Vec<Vec<f64>> = (0..cfg.n_designs)
        .map(|_| (0..cfg.design_dim).map(|_| rng.random_range(-1.0..=1.0)).collect())
        .collect();
    let per_design = designs
        .par_iter()
        .enumerate()
        .map(|(k, design)| {
            let (oracle_eig, oracle_grad) = model.eig_oracle(design)?;
            let stream = seeds.child("bias", k as u64);
            let mut rows = Vec::with_capacity(cfg.estimators.len());
            for named in &cfg.estimators {
                let mut samples: Vec<Vec<f64>> = (0..cfg.design_dim).map(|_| Vec::with_capacity(cfg.replicates)).collect();
                for r in 0..cfg.replicates {
                    let mut sim = Simulator::new(&model, design)?;
                    let mut rng = stream.rng(&named.label, r as u64);
                    let g = named.estimator.estimate(&mut sim, &mut rng, None)?;
                    for (col, v) in samples.iter_mut().zip(g.gradient) {
                        col.push(v);
                    }
                }
                let (mean_grad, se_grad): (Vec<f64>, Vec<f64>) = samples.iter().map(|c| mean_se(c)).unzip();
                let bias_norm = mean_grad
                    .iter()
                    .zip(&oracle_grad)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt();
                let se = se_grad.iter().map(|s| s * s).sum::<f64>().sqrt();
                rows.push(BiasRow {
                    design_id: k,
                    design: design.clone(),
                    oracle_eig,
                    oracle_grad: oracle_grad.clone(),
                    estimator: named.label.clone(),
                    mean_grad,
                    se_grad,
                    bias_norm,
                    se,
                });
            }
            Ok(rows)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BiasReport { rows: per_design.into_iter().flatten().collect() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gaussian_points(n: usize, scale: f64, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| vec![scale * rng.sample::<f64, _>(StandardNormal)]).collect()
    }

    #[test]
    fn standard_normal_entropy() {
        let kde = Kde::fit(gaussian_points(1000, 1.0, 1)).unwrap();
        let h = kde.resubstitution_entropy();
        let exact = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln();
        assert!((h - exact).abs() < 0.1, "{h} vs {exact}");
    }

    #[test]
    fn density_integrates_to_one() {
        let kde = Kde::fit(gaussian_points(200, 1.0, 2)).unwrap();
        let (lo, hi, n) = (-10.0, 10.0, 20_000);
        let dx = (hi - lo) / n as f64;
        let total: f64 = (0..=n)
            .map(|k| {
                let w = if k == 0 || k == n { 0.5 } else { 1.0 };
                w * kde.log_density(&[lo + k as f64 * dx]).exp()
            })
            .sum::<f64>()
            * dx;
        assert!((total - 1.0).abs() < 1e-3, "{total}");
    }

    #[test]
    fn scaling_shifts_entropy_by_log_scale() {
        let base = Kde::fit(gaussian_points(300, 1.0, 3)).unwrap().resubstitution_entropy();
        let scaled = Kde::fit(gaussian_points(300, 5.0, 3)).unwrap().resubstitution_entropy();
        assert!((scaled - base - 5f64.ln()).abs() < 0.05);
    }

    #[test]
    fn constant_sample_is_floored() {
        let kde = Kde::fit(vec![vec![1.0, 2.0], vec![1.0, 3.0], vec![1.0, 2.5]]).unwrap();
        assert_eq!(kde.bandwidths()[0], MIN_BANDWIDTH);
        assert!(kde.resubstitution_entropy().is_finite());
    }

    #[test]
    fn uninformative_design_keeps_prior_entropy() {
        let model = LinearModel::new(1, 1e10).unwrap();
        let report = posterior_entropy(
            &model,
            &[0.3],
            20,
            &SamplerConfig::exact(1),
            400,
            &SeedStream::new(4),
        )
        .unwrap();
        let prior = 1.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln();
        // Resubstitution is biased low by a fraction of a nat in 3-D at n = 400.
        assert!((report.mean_entropy - prior).abs() < 0.3, "{report:?}");
        assert_eq!(report.entropies.len(), 20);
    }

    #[test]
    fn entropy_is_independent_of_worker_count() {
        let model = crate::model::ToyModel::large_noise();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| {
                    posterior_entropy(&model, &[0.4, 1.0], 6, &SamplerConfig::slice(1, 2), 50, &SeedStream::new(5))
                        .unwrap()
                })
        };
        assert_eq!(run(1), run(3));
    }

    #[test]
    fn small_bias_study_shapes() {
        let mut cfg = BiasStudyConfig { n_designs: 2, replicates: 3, ..Default::default() };
        cfg.estimators.truncate(2);
        let report = bias_study(&cfg, &SeedStream::new(6)).unwrap();
        assert_eq!(report.rows.len(), 4);
        assert!(report.rows.iter().all(|r| r.bias_norm.is_finite() && r.se > 0.0));
    }
}
