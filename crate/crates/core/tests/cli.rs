use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gradeig"))
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// Trajectory rows without the wall-clock column.
fn without_wall_time(csv: &str) -> Vec<String> {
    csv.lines().map(|l| l.rsplit_once(',').unwrap().0.to_string()).collect()
}

#[test]
fn optimize_is_deterministic_across_runs_and_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("toy_large_ueeg.toml");
    let mut trajectories = Vec::new();
    for (i, threads) in ["1", "2"].iter().enumerate() {
        let out_dir = dir.path().join(format!("run{i}"));
        let out = run(&[
            "--threads",
            threads,
            "optimize",
            "--config",
            cfg.to_str().unwrap(),
            "--seed",
            "7",
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        ok(&out);
        let traj = read(&out_dir.join("trajectory.csv"));
        assert!(traj.starts_with("step,lambda_0,lambda_1,grad_norm,forward_evals,wall_ms\n"));
        trajectories.push(without_wall_time(&traj));
        assert!(read(&out_dir.join("final_design.csv")).starts_with("lambda_0,lambda_1\n"));
        let meta: serde_json::Value = serde_json::from_str(&read(&out_dir.join("run_meta.json"))).unwrap();
        assert_eq!(meta["seed"], 7);
        assert_eq!(meta["config_sha256"].as_str().unwrap().len(), 64);
    }
    assert_eq!(trajectories[0], trajectories[1]);
}

#[test]
fn eig_of_the_one_dimensional_linear_model() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "eig",
        "--config",
        config("linear_eig.toml").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    ok(&out);
    let csv = read(&dir.path().join("eig.csv"));
    let nmc: Vec<&str> = csv.lines().find(|l| l.starts_with("nmc,")).unwrap().split(',').collect();
    let (value, se): (f64, f64) = (nmc[1].parse().unwrap(), nmc[2].parse().unwrap());
    let exact = 0.5 * std::f64::consts::LN_2;
    assert!((value - exact).abs() <= se, "{value} ± {se} vs {exact}");
    assert!(String::from_utf8_lossy(&out.stdout).contains("srnmc"));
}

#[test]
fn selftest_passes() {
    let out = run(&["selftest"]);
    ok(&out);
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(text.lines().filter(|l| l.starts_with("[PASS]")).count(), 5, "{text}");
}

#[test]
fn config_errors_exit_with_two_and_a_location() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "seed = 1\n[model]\nkind = \"toy\"\nnoise_sd = 0.1\nnoise_scale = 2\n").unwrap();
    let out = run(&["eig", "--config", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    // Tagged tables report the location of the table holding the bad key.
    assert!(err.contains("noise_scale") && err.contains("line 2"), "{err}");

    let out = run(&["grad", "--config", config("toy_large_beeg.toml").to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "a design is required");

    let out = run(&[
        "grad",
        "--config",
        config("toy_large_beeg.toml").to_str().unwrap(),
        "--design",
        "0.5,1.5",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2), "design outside the box");

    let out = run(&["eig", "--config", dir.path().join("missing.toml").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn grad_then_entropy_from_a_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "grad",
        "--config",
        config("toy_large_beeg.toml").to_str().unwrap(),
        "--design",
        "0.4,0.9",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    ok(&out);
    let grad = read(&dir.path().join("grad.csv"));
    assert!(grad.starts_with("lambda_0,lambda_1,grad_0,grad_1,grad_norm,forward_evals\n"));
    assert!(grad.lines().nth(1).unwrap().ends_with(",100"), "BEEG-AP with M = 100 costs 100: {grad}");

    let traj = dir.path().join("trajectory.csv");
    std::fs::write(
        &traj,
        "step,lambda_0,lambda_1,grad_norm,forward_evals,wall_ms\n0,0.1,0.2,,0,0\n1,0.4,0.9,1.0,100,1\n",
    )
    .unwrap();
    let cfg = dir.path().join("entropy.toml");
    std::fs::write(
        &cfg,
        "seed = 3\n[model]\nkind = \"toy\"\nnoise_sd = 0.1\n[validate]\nentropy_trials = 4\nkde_samples = 20\n",
    )
    .unwrap();
    let out = run(&[
        "entropy",
        "--config",
        cfg.to_str().unwrap(),
        "--trajectory",
        traj.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    ok(&out);
    let entropy = read(&dir.path().join("entropy.csv"));
    let lines: Vec<&str> = entropy.lines().collect();
    assert_eq!(lines[0], "trial,entropy");
    assert_eq!(lines.len(), 1 + 4 + 2);
    assert!(lines[5].starts_with("mean,") && lines[6].starts_with("se,"));
}

#[test]
fn bias_study_writes_one_row_per_design_and_estimator() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bias.toml");
    std::fs::write(
        &cfg,
        r#"seed = 1
[model]
kind = "linear"
sigma2 = 0.1
design_dim = 2

[bias_study]
sigma2 = 0.1
design_dim = 2
n_designs = 3
replicates = 4

[[bias_study.estimators]]
label = "beeg_ap"
estimator = { kind = "beeg_ap", m = 10 }

[[bias_study.estimators]]
label = "pce"
estimator = { kind = "pce", m = 5, n = 5 }
"#,
    )
    .unwrap();
    let out = run(&["bias-study", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    ok(&out);
    let csv = read(&dir.path().join("bias.csv"));
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(
        lines[0],
        "design_id,lambda_0,lambda_1,oracle_eig,oracle_grad_0,oracle_grad_1,est,mean_grad_0,mean_grad_1,bias_norm,se"
    );
    assert_eq!(lines.len(), 1 + 3 * 2);
}
