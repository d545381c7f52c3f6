//! Command-line front end.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::{BuiltModel, ExperimentConfig};
use crate::eig_est::{nmc_value, pce_value, srnmc_value, EigEstimate};
use crate::error::{Error, Result};
use crate::model::{Design, Model, Simulator};
use crate::optim::optimize;
use crate::report::{indexed, real, reals, write_csv};
use crate::rng::SeedStream;
use crate::selftest::run_selftest;
use crate::validate::{bias_study, posterior_entropy, BiasStudyConfig};
use crate::with_model;

#[derive(Debug, Parser)]
#[command(name = "gradeig", version, about = "Gradient-based Bayesian experimental design")]
pub struct Cli {
    /// Worker threads; changes wall time only, never results.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Comma-separated design, overriding the config's.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub design: Option<Vec<f64>>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Projected stochastic gradient ascent under a simulation budget.
    Optimize(RunArgs),
    /// One gradient estimate at a design.
    Grad(RunArgs),
    /// NMC, srNMC and PCE estimates at a design.
    Eig(RunArgs),
    /// Mean posterior entropy at a design or at the end of a trajectory.
    Entropy {
        #[command(flatten)]
        run: RunArgs,
        /// Take the design from the last row of a trajectory.csv.
        #[arg(long, conflicts_with = "design")]
        trajectory: Option<PathBuf>,
    },
    /// Bias of gradient estimators against the linear model's closed form.
    BiasStudy(RunArgs),
    /// Invariant checks on built-in models.
    Selftest {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Serialize)]
struct RunMeta<'a> {
    command: &'a str,
    config: String,
    config_sha256: String,
    seed: u64,
    crate_version: &'static str,
}

/// A loaded config with command-line overrides applied.
struct Run {
    cfg: ExperimentConfig,
    base: PathBuf,
    out: PathBuf,
    config_path: PathBuf,
}

impl Run {
    fn load(args: &RunArgs) -> Result<Self> {
        let mut cfg = ExperimentConfig::load(&args.config)?;
        if let Some(seed) = args.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &args.out {
            cfg.out_dir = out.clone();
        }
        if let Some(design) = &args.design {
            cfg.design = Some(design.clone());
        }
        let base = args.config.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Run { out: cfg.out_dir.clone(), cfg, base, config_path: args.config.clone() })
    }

    fn model(&self) -> Result<BuiltModel> {
        self.cfg.model.build(&self.base)
    }

    fn seeds(&self) -> SeedStream {
        SeedStream::new(self.cfg.seed)
    }

    fn start(&self, command: &str) -> Result<()> {
        std::fs::create_dir_all(&self.out)?;
        let meta = RunMeta {
            command,
            config: self.config_path.display().to_string(),
            config_sha256: self.cfg.hash(),
            seed: self.cfg.seed,
            crate_version: env!("CARGO_PKG_VERSION"),
        };
        let json = serde_json::to_string_pretty(&meta).expect("meta serializes");
        std::fs::write(self.out.join("run_meta.json"), json + "\n")?;
        Ok(())
    }

    /// The configured design, checked against the model's box.
    fn design<M: Model>(&self, model: &M) -> Result<Design> {
        let values = self
            .cfg
            .design
            .clone()
            .ok_or_else(|| Error::Config("a design is required (config `design` or --design)".into()))?;
        Design::new(values, model.design_bounds().to_vec()).map_err(|e| Error::Config(e.to_string()))
    }
}

fn design_row(name: &str, design: &[f64], path: &Path) -> Result<()> {
    let header: Vec<String> = indexed(name, design.len()).collect();
    write_csv(path, &header, &[reals(design).collect()])
}

fn cmd_optimize(args: &RunArgs) -> Result<()> {
    let run = Run::load(args)?;
    let estimator = run.cfg.estimator.clone().ok_or_else(|| Error::Config("missing [estimator]".into()))?;
    let optim = run.cfg.optim.clone().ok_or_else(|| Error::Config("missing [optim]".into()))?;
    let seeds = run.seeds();
    with_model!(&run.model()?, model => {
        let init = match run.cfg.design {
            Some(_) => run.design(model)?,
            None => Design::random(model.design_bounds(), &mut seeds.rng("init", 0)),
        };
        run.start("optimize")?;
        let traj = optimize(model, &init, &estimator, &optim, &seeds)?;
        traj.write_csv(&run.out.join("trajectory.csv"))?;
        design_row("lambda", traj.final_design(), &run.out.join("final_design.csv"))?;
        println!(
            "{} steps, {} forward evals, {} skipped; final design {:?}",
            traj.records.len() - 1,
            traj.forward_evals(),
            traj.failures.len(),
            traj.final_design()
        );
        Ok(())
    })
}

fn cmd_grad(args: &RunArgs) -> Result<()> {
    let run = Run::load(args)?;
    let estimator = run.cfg.estimator.clone().ok_or_else(|| Error::Config("missing [estimator]".into()))?;
    let seeds = run.seeds();
    with_model!(&run.model()?, model => {
        let design = run.design(model)?;
        run.start("grad")?;
        let mut sim = Simulator::new(model, design.values())?;
        let atoms = estimator
            .fixed_atoms
            .then(|| crate::eig_est::OuterBatch::draw(model, estimator.m, &mut seeds.rng("atoms", 0)));
        let g = estimator.estimate(&mut sim, &mut seeds.rng("grad", 0), atoms.as_ref())?;
        let d = design.values().len();
        let mut header: Vec<String> = indexed("lambda", d).collect();
        header.extend(indexed("grad", d));
        header.extend(["grad_norm", "forward_evals"].map(String::from));
        let mut row: Vec<String> = reals(design.values()).collect();
        row.extend(reals(&g.gradient));
        row.push(real(g.norm()));
        row.push(g.forward_evals_used.to_string());
        write_csv(&run.out.join("grad.csv"), &header, &[row])?;
        println!("gradient {:?}", g.gradient);
        println!("norm {:.6e}, cost {} forward evals", g.norm(), g.forward_evals_used);
        Ok(())
    })
}

fn cmd_eig(args: &RunArgs) -> Result<()> {
    let run = Run::load(args)?;
    let seeds = run.seeds();
    let v = &run.cfg.validate;
    with_model!(&run.model()?, model => {
        let design = run.design(model)?;
        run.start("eig")?;
        let mut sim = Simulator::new(model, design.values())?;
        let estimates: Vec<(&str, EigEstimate)> = vec![
            ("nmc", nmc_value(&mut sim, v.nmc_m, v.nmc_n, &mut seeds.rng("eig-nmc", 0))?),
            ("srnmc", srnmc_value(&mut sim, v.nmc_m, &mut seeds.rng("eig-srnmc", 0))?),
            ("pce", pce_value(&mut sim, v.nmc_m, v.nmc_n, &mut seeds.rng("eig-pce", 0))?),
        ];
        let header = ["estimator", "value", "std_error", "outer_m", "inner_n", "forward_evals"].map(String::from);
        let rows: Vec<Vec<String>> = estimates
            .iter()
            .map(|(name, e)| {
                vec![
                    name.to_string(),
                    real(e.value),
                    real(e.std_error),
                    e.outer_m.to_string(),
                    e.inner_n.to_string(),
                    e.forward_evals_used.to_string(),
                ]
            })
            .collect();
        write_csv(&run.out.join("eig.csv"), &header, &rows)?;
        for (name, e) in &estimates {
            println!("{name:>6}: {:.6} ± {:.6}", e.value, e.std_error);
        }
        Ok(())
    })
}

/// Design columns `lambda_*` of the last row of a trajectory CSV.
pub fn last_design(path: &Path) -> Result<Vec<f64>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::Config(format!("trajectory {}: {e}", path.display())))?;
    let cols: Vec<usize> = reader
        .headers()?
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with("lambda_"))
        .map(|(i, _)| i)
        .collect();
    let last = reader
        .records()
        .last()
        .ok_or_else(|| Error::Config(format!("trajectory {} has no rows", path.display())))??;
    cols.iter()
        .map(|&i| {
            last[i]
                .parse()
                .map_err(|e| Error::Config(format!("trajectory {}: bad design value: {e}", path.display())))
        })
        .collect()
}

fn cmd_entropy(args: &RunArgs, trajectory: Option<&Path>) -> Result<()> {
    let mut run = Run::load(args)?;
    if let Some(path) = trajectory {
        run.cfg.design = Some(last_design(path)?);
    }
    let seeds = run.seeds();
    let v = run.cfg.validate.clone();
    with_model!(&run.model()?, model => {
        let design = run.design(model)?;
        run.start("entropy")?;
        let report = posterior_entropy(model, design.values(), v.entropy_trials, &v.sampler, v.kde_samples, &seeds)?;
        report.write_csv(&run.out.join("entropy.csv"))?;
        println!(
            "mean posterior entropy ({}) {:.6} ± {:.6} over {} trials",
            report.space, report.mean_entropy, report.std_error, report.trials
        );
        Ok(())
    })
}

fn cmd_bias_study(args: &RunArgs) -> Result<()> {
    let run = Run::load(args)?;
    let cfg = run.cfg.bias_study.clone().unwrap_or_else(BiasStudyConfig::default);
    run.start("bias-study")?;
    let report = bias_study(&cfg, &run.seeds())?;
    report.write_csv(&run.out.join("bias.csv"))?;
    println!("{} rows written", report.rows.len());
    Ok(())
}

/// Returns whether every check passed.
fn cmd_selftest(seed: u64) -> bool {
    let outcomes = run_selftest(seed);
    for o in &outcomes {
        println!("{o}");
    }
    outcomes.iter().all(|o| o.passed)
}

/// Exit code: 0 on success, 1 for runtime failures, 2 for config errors.
pub fn run(cli: Cli) -> i32 {
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: --threads: {e}");
            return 2;
        }
    }
    let result = match &cli.command {
        Command::Optimize(a) => cmd_optimize(a),
        Command::Grad(a) => cmd_grad(a),
        Command::Eig(a) => cmd_eig(a),
        Command::Entropy { run, trajectory } => cmd_entropy(run, trajectory.as_deref()),
        Command::BiasStudy(a) => cmd_bias_study(a),
        Command::Selftest { seed } => return if cmd_selftest(*seed) { 0 } else { 1 },
    };
    match result {
        Ok(()) => 0,
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}");
            2
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
