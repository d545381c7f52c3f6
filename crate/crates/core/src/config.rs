//! TOML experiment configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grad_est::EstimatorConfig;
use crate::model::{EpoRInput, LinearModel, PkModel, Stat5Model, ToyModel};
use crate::optim::OptimConfig;
use crate::sampler::SamplerConfig;
use crate::validate::{BiasStudyConfig, NMC_VALIDATE_DEFAULT};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    Linear {
        sigma2: f64,
        design_dim: usize,
    },
    Toy {
        noise_sd: f64,
    },
    Pk {
        mult_var: f64,
        add_var: f64,
    },
    Stat5 {
        noise_var: f64,
        #[serde(default = "default_stat5_step")]
        step: f64,
        /// Two-column `time,value` CSV; the synthetic input when absent.
        #[serde(default)]
        epor_csv: Option<PathBuf>,
    },
}

fn default_stat5_step() -> f64 {
    crate::model::stat5::DEFAULT_STEP
}

/// A constructed model of any supported kind.
#[derive(Debug, Clone)]
pub enum BuiltModel {
    Linear(LinearModel),
    Toy(ToyModel),
    Pk(PkModel),
    Stat5(Stat5Model),
}

/// Run `$body` with `$m` bound to the concrete model inside a [`BuiltModel`].
#[macro_export]
macro_rules! with_model {
    ($built:expr, $m:ident => $body:expr) => {
        match $built {
            $crate::config::BuiltModel::Linear($m) => $body,
            $crate::config::BuiltModel::Toy($m) => $body,
            $crate::config::BuiltModel::Pk($m) => $body,
            $crate::config::BuiltModel::Stat5($m) => $body,
        }
    };
}

impl ModelConfig {
    /// Relative paths resolve against `base` (the config file's directory).
    pub fn build(&self, base: &Path) -> Result<BuiltModel> {
        Ok(match self {
            ModelConfig::Linear { sigma2, design_dim } => {
                if *design_dim == 0 {
                    return Err(Error::Config("model.design_dim must be >= 1".into()));
                }
                BuiltModel::Linear(LinearModel::new(*design_dim, *sigma2)?)
            }
            ModelConfig::Toy { noise_sd } => BuiltModel::Toy(ToyModel::new(*noise_sd)?),
            ModelConfig::Pk { mult_var, add_var } => BuiltModel::Pk(PkModel::new(*mult_var, *add_var)?),
            ModelConfig::Stat5 { noise_var, step, epor_csv } => {
                let epor = match epor_csv {
                    Some(p) => {
                        let path = base.join(p);
                        if !path.exists() {
                            return Err(Error::Config(format!(
                                "model.epor_csv: file {} does not exist",
                                path.display()
                            )));
                        }
                        EpoRInput::from_csv(path)?
                    }
                    None => EpoRInput::synthetic_default(),
                };
                BuiltModel::Stat5(Stat5Model::new(epor, *noise_var, *step)?)
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateConfig {
    #[serde(default = "default_nmc")]
    pub nmc_m: usize,
    #[serde(default = "default_nmc")]
    pub nmc_n: usize,
    #[serde(default = "default_trials")]
    pub entropy_trials: usize,
    #[serde(default = "default_kde")]
    pub kde_samples: usize,
    #[serde(default)]
    pub sampler: SamplerConfig,
}

fn default_nmc() -> usize {
    NMC_VALIDATE_DEFAULT
}

fn default_trials() -> usize {
    50
}

fn default_kde() -> usize {
    200
}

impl Default for ValidateConfig {
    fn default() -> Self {
        ValidateConfig {
            nmc_m: default_nmc(),
            nmc_n: default_nmc(),
            entropy_trials: default_trials(),
            kde_samples: default_kde(),
            sampler: SamplerConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    pub model: ModelConfig,
    /// Design for `grad`, `eig` and `entropy`; initial design for `optimize`
    /// (uniform in the box when absent).
    #[serde(default)]
    pub design: Option<Vec<f64>>,
    #[serde(default)]
    pub estimator: Option<EstimatorConfig>,
    #[serde(default)]
    pub optim: Option<OptimConfig>,
    #[serde(default)]
    pub validate: ValidateConfig,
    #[serde(default)]
    pub bias_study: Option<BiasStudyConfig>,
}

fn default_out() -> PathBuf {
    PathBuf::from("runs")
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(e) = &self.estimator {
            e.validate().map_err(|e| Error::Config(format!("estimator: {e}")))?;
        }
        if let Some(o) = &self.optim {
            o.validate()?;
        }
        let v = &self.validate;
        if v.nmc_m == 0 || v.nmc_n == 0 || v.entropy_trials == 0 || v.kde_samples < 2 {
            return Err(Error::Config(
                "validate: nmc_m, nmc_n, entropy_trials must be >= 1 and kde_samples >= 2".into(),
            ));
        }
        v.sampler.validate().map_err(|e| Error::Config(format!("validate.sampler: {e}")))?;
        if let Some(b) = &self.bias_study {
            b.validate().map_err(|e| match e {
                Error::Config(_) => e,
                other => Error::Config(format!("bias_study: {other}")),
            })?;
        }
        Ok(())
    }

    /// SHA-256 of the canonical TOML serialization.
    pub fn hash(&self) -> String {
        let canonical = toml::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOY: &str = r#"
seed = 7
out_dir = "runs/toy"

[model]
kind = "toy"
noise_sd = 0.1

[estimator]
kind = "ueeg_mcmc"
m = 10

[estimator.sampler]
kind = "slice"
n_samples = 2
thinning = 2

[optim]
step_rule = "sgd"
learning_rate = 0.1
max_forward_evals = 20000
max_steps = 100000
"#;

    #[test]
    fn parses_a_full_config() {
        let cfg = ExperimentConfig::parse(TOY).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.model, ModelConfig::Toy { noise_sd: 0.1 });
        let est = cfg.estimator.unwrap();
        assert_eq!(est.sampler.n_samples, 2);
        assert_eq!(est.sampler.slice_max_stepout, SamplerConfig::default().slice_max_stepout);
        assert_eq!(cfg.optim.unwrap().adam_betas, (0.9, 0.999));
    }

    #[test]
    fn rejects_unknown_keys_with_location() {
        let bad = TOY.replace("noise_sd = 0.1", "noise_sd = 0.1\nnoise = 3");
        let err = ExperimentConfig::parse(&bad).unwrap_err().to_string();
        assert!(err.contains("noise"), "{err}");
        assert!(err.contains("line"), "{err}");
        let bad = TOY.replace("m = 10", "m = 10\nbatch = 4");
        assert!(ExperimentConfig::parse(&bad).is_err());
    }

    #[test]
    fn rejects_out_of_range_values() {
        let bad = TOY.replace("learning_rate = 0.1", "learning_rate = -1.0");
        let err = ExperimentConfig::parse(&bad).unwrap_err().to_string();
        assert!(err.contains("learning_rate"), "{err}");
        let bad = TOY.replace("m = 10", "m = 0");
        assert!(ExperimentConfig::parse(&bad).is_err());
    }

    #[test]
    fn missing_epor_file_is_reported() {
        let m = ModelConfig::Stat5 { noise_var: 1e-4, step: 0.25, epor_csv: Some("nope.csv".into()) };
        let err = m.build(Path::new("/nonexistent")).unwrap_err().to_string();
        assert!(err.contains("does not exist"), "{err}");
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = ExperimentConfig::parse(TOY).unwrap();
        let b = ExperimentConfig::parse(&TOY.replace("seed = 7", "seed = 8")).unwrap();
        assert_eq!(a.hash(), a.clone().hash());
        assert_ne!(a.hash(), b.hash());
    }
}
