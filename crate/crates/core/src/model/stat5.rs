//! JAK–STAT5 signalling model with a delay chain.
//!
//! Four coupled ODEs for the STAT5 populations, driven by the receptor
//! activity `EpoR_A(t)`, with the delayed term `x₃(t − τ)` replaced by a
//! linear chain of `N` compartments. Observations are
//! `y₁ = s₁(x₂ + x₃)` and `y₂ = s₂(x₁ + x₂ + x₃)` at 16 measurement times in
//! `[0, 60]` minutes, read off the solution grid by cubic Hermite
//! interpolation with node slopes from the right-hand side, so observations
//! are continuously differentiable in the measurement times.
//! `θ = (k₁, k₂, τ)` has a uniform box prior.
//!
//! The solution depends on θ only, so derivatives with respect to the
//! measurement times flow through the interpolation.

use std::path::Path;

use rand::Rng;

use crate::dual::Scalar;
use crate::error::{Error, Result};
use crate::ode::rk38;

use super::{forward_error, gaussian_fixed_partials, gaussian_log_density_fixed, Model, Theta};

pub const N_TIMES: usize = 16;
pub const T_END: f64 = 60.0;
pub const CHAIN_LEN: usize = 8;
pub const X1_INIT: f64 = 3.71;
pub const S1: f64 = 0.33;
pub const S2: f64 = 0.26;
pub const PRIOR_LO: [f64; 3] = [0.5, 0.05, 4.0];
pub const PRIOR_HI: [f64; 3] = [3.0, 0.2, 10.0];
pub const DEFAULT_STEP: f64 = 0.25;

const STATE_DIM: usize = 4 + CHAIN_LEN;

/// Piecewise-linear receptor activity, clamped outside the data range.
#[derive(Debug, Clone, PartialEq)]
pub struct EpoRInput {
    times: Vec<f64>,
    values: Vec<f64>,
}

impl EpoRInput {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() || times.len() < 2 {
            return Err(Error::Input("EpoR input needs at least 2 (t, value) rows".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Input("EpoR times must be strictly increasing".into()));
        }
        if times.iter().chain(&values).any(|v| !v.is_finite()) {
            return Err(Error::Input("EpoR input contains non-finite values".into()));
        }
        Ok(EpoRInput { times, values })
    }

    /// Read a CSV with header `t,value`.
    pub fn from_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut reader = csv::Reader::from_path(path)?;
        let headers = reader.headers()?.clone();
        if headers.len() != 2 || &headers[0] != "t" || &headers[1] != "value" {
            return Err(Error::Input(format!(
                "{}: expected header `t,value`, found `{}`",
                path.display(),
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut times = Vec::new();
        let mut values = Vec::new();
        for (line, rec) in reader.records().enumerate() {
            let rec = rec?;
            let parse = |s: &str| {
                s.trim().parse::<f64>().map_err(|e| {
                    Error::Input(format!("{}: row {}: {e}", path.display(), line + 2))
                })
            };
            times.push(parse(&rec[0])?);
            values.push(parse(&rec[1])?);
        }
        EpoRInput::new(times, values)
    }

    /// Synthetic pulse for self-tests; not measured data. Rises linearly to
    /// 1 at t = 10 and decays, halving every 10 minutes, to 0 at t = 60.
    pub fn synthetic_default() -> Self {
        EpoRInput::new(
            vec![0.0, 10.0, 20.0, 30.0, 40.0, 50.0, 60.0],
            vec![0.0, 1.0, 0.5, 0.25, 0.125, 0.0625, 0.0],
        )
        .unwrap()
    }

    pub fn eval(&self, t: f64) -> f64 {
        let n = self.times.len();
        if t <= self.times[0] {
            return self.values[0];
        }
        if t >= self.times[n - 1] {
            return self.values[n - 1];
        }
        let j = self.times.partition_point(|&x| x <= t) - 1;
        let w = (t - self.times[j]) / (self.times[j + 1] - self.times[j]);
        self.values[j] + w * (self.values[j + 1] - self.values[j])
    }
}

#[derive(Debug, Clone)]
pub struct Stat5Model {
    epor: EpoRInput,
    noise_var: f64,
    noise_sd: f64,
    step: f64,
    n_steps: usize,
    bounds: Vec<(f64, f64)>,
}

impl Stat5Model {
    pub fn new(epor: EpoRInput, noise_var: f64, step: f64) -> Result<Self> {
        if !(noise_var > 0.0 && noise_var.is_finite()) {
            return Err(Error::Config(format!("stat5: noise variance must be > 0, got {noise_var}")));
        }
        let n_steps = (T_END / step).round() as usize;
        if !(step > 0.0) || n_steps == 0 || ((n_steps as f64) * step - T_END).abs() > 1e-9 {
            return Err(Error::Config(format!("stat5: step {step} must divide {T_END}")));
        }
        Ok(Stat5Model {
            epor,
            noise_var,
            noise_sd: noise_var.sqrt(),
            step,
            n_steps,
            bounds: vec![(0.0, T_END); N_TIMES],
        })
    }

    /// Synthetic input, given noise variance, default step.
    pub fn with_synthetic_input(noise_var: f64) -> Self {
        Stat5Model::new(EpoRInput::synthetic_default(), noise_var, DEFAULT_STEP).unwrap()
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    fn rhs(&self, theta: &[f64], t: f64, x: &[f64], dx: &mut [f64]) {
        let (k1, k2, tau) = (theta[0], theta[1], theta[2]);
        let rate = CHAIN_LEN as f64 / tau;
        let e = self.epor.eval(t);
        let delayed = x[STATE_DIM - 1];
        dx[0] = -k1 * x[0] * e + k2 * delayed;
        dx[1] = -x[1] * x[1] + k1 * x[0] * e;
        dx[2] = -k2 * x[2] + x[1] * x[1];
        dx[3] = -k2 * delayed + k2 * x[2];
        dx[4] = rate * (x[2] - x[4]);
        for i in 5..STATE_DIM {
            dx[i] = rate * (x[i - 1] - x[i]);
        }
    }

    /// Full state trajectory on the integration grid.
    pub fn solve(&self, theta: &[f64]) -> Vec<f64> {
        let mut y0 = [0.0; STATE_DIM];
        y0[0] = X1_INIT;
        rk38(|t, x, dx| self.rhs(theta, t, x, dx), 0.0, &y0, self.step, self.n_steps)
    }

    /// Observables `y₁`, `y₂` and their time derivatives on the grid.
    fn observables(&self, theta: &[f64]) -> Option<[Vec<f64>; 4]> {
        let states = self.solve(theta);
        let mut out: [Vec<f64>; 4] = Default::default();
        let mut dx = [0.0; STATE_DIM];
        for (j, x) in states.chunks_exact(STATE_DIM).enumerate() {
            if x.iter().any(|v| !v.is_finite()) {
                return None;
            }
            self.rhs(theta, j as f64 * self.step, x, &mut dx);
            out[0].push(S1 * (x[1] + x[2]));
            out[1].push(S1 * (dx[1] + dx[2]));
            out[2].push(S2 * (x[0] + x[1] + x[2]));
            out[3].push(S2 * (dx[0] + dx[1] + dx[2]));
        }
        Some(out)
    }

    /// Cubic Hermite interpolation of `values` with slopes `slopes`.
    fn interpolate<S: Scalar>(&self, values: &[f64], slopes: &[f64], t: &S) -> S {
        let h = self.step;
        let tv = t.value().clamp(0.0, T_END);
        let j = ((tv / h).floor() as usize).min(self.n_steps - 1);
        let s = (t.clone() - j as f64 * h) / h;
        let s2 = s.square();
        let s3 = s2.clone() * s.clone();
        let h00 = s3.clone() * 2.0 - s2.clone() * 3.0 + 1.0;
        let h10 = s3.clone() - s2.clone() * 2.0 + s;
        let h01 = s2.clone() * 3.0 - s3.clone() * 2.0;
        let h11 = s3 - s2;
        h00 * values[j] + h10 * (h * slopes[j]) + h01 * values[j + 1] + h11 * (h * slopes[j + 1])
    }
}

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl Model for Stat5Model {
    fn name(&self) -> &'static str {
        "stat5"
    }

    fn design_bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    fn param_dim(&self) -> usize {
        3
    }

    fn noise_dim(&self) -> usize {
        2 * N_TIMES
    }

    /// `y₁` at every time, then `y₂` at every time.
    fn obs_dim(&self) -> usize {
        2 * N_TIMES
    }

    fn sample_prior<R: Rng + ?Sized>(&self, rng: &mut R) -> Theta {
        (0..3)
            .map(|k| PRIOR_LO[k] + (PRIOR_HI[k] - PRIOR_LO[k]) * rng.random::<f64>())
            .collect()
    }

    fn log_prior(&self, theta: &[f64]) -> f64 {
        let mut acc = 0.0;
        for k in 0..3 {
            if !(theta[k] >= PRIOR_LO[k] && theta[k] <= PRIOR_HI[k]) {
                return f64::NEG_INFINITY;
            }
            acc -= (PRIOR_HI[k] - PRIOR_LO[k]).ln();
        }
        acc
    }

    fn forward<S: Scalar>(&self, theta: &[f64], design: &[S]) -> Result<Vec<S>> {
        let times: Vec<f64> = design.iter().map(Scalar::value).collect();
        let [y1, dy1, y2, dy2] = self
            .observables(theta)
            .ok_or_else(|| forward_error(theta, &times, "non-finite ODE state"))?;
        let mut out = Vec::with_capacity(2 * design.len());
        out.extend(design.iter().map(|t| self.interpolate(&y1, &dy1, t)));
        out.extend(design.iter().map(|t| self.interpolate(&y2, &dy2, t)));
        Ok(out)
    }

    fn observe<S: Scalar>(&self, forward: &[S], noise: &[f64]) -> Vec<S> {
        forward
            .iter()
            .zip(noise)
            .map(|(f, e)| f.clone() + self.noise_sd * e)
            .collect()
    }

    fn obs_log_density<S: Scalar>(&self, y: &S, f: &S) -> S {
        gaussian_log_density_fixed(y, f, self.noise_sd)
    }

    fn obs_log_density_partials(&self, y: f64, f: f64) -> (f64, f64, f64) {
        gaussian_fixed_partials(y, f, self.noise_sd)
    }

    /// Logit of the position inside the prior box.
    fn to_unconstrained(&self, theta: &[f64]) -> Vec<f64> {
        (0..3)
            .map(|k| {
                let u = (theta[k] - PRIOR_LO[k]) / (PRIOR_HI[k] - PRIOR_LO[k]);
                (u / (1.0 - u)).ln()
            })
            .collect()
    }

    fn from_unconstrained(&self, z: &[f64]) -> Theta {
        (0..3)
            .map(|k| PRIOR_LO[k] + (PRIOR_HI[k] - PRIOR_LO[k]) * logistic(z[k]))
            .collect()
    }

    /// Uniform prior pushed through the logit: `Π s(1 − s)`.
    fn log_prior_unconstrained(&self, z: &[f64]) -> f64 {
        z.iter()
            .map(|&v| {
                let s = logistic(v);
                (s * (1.0 - s)).ln()
            })
            .sum()
    }

    fn unconstrained_scale(&self) -> Vec<f64> {
        vec![std::f64::consts::PI / 3f64.sqrt(); 3]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epor_interpolation_and_clamping() {
        let e = EpoRInput::synthetic_default();
        assert_eq!(e.eval(-5.0), 0.0);
        assert_eq!(e.eval(5.0), 0.5);
        assert_eq!(e.eval(10.0), 1.0);
        assert_eq!(e.eval(15.0), 0.75);
        assert_eq!(e.eval(100.0), 0.0);
        assert!(EpoRInput::new(vec![0.0], vec![1.0]).is_err());
        assert!(EpoRInput::new(vec![0.0, 0.0], vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn initial_state_and_mass() {
        let m = Stat5Model::with_synthetic_input(1e-4);
        let f = m.forward(&[1.5, 0.1, 6.0], &[0.0; N_TIMES][..]).unwrap();
        assert!(f[..N_TIMES].iter().all(|&v| v == 0.0));
        assert!(f[N_TIMES..].iter().all(|&v| (v - S2 * X1_INIT).abs() < 1e-15));
        // Total STAT5 x₁ + x₂ + 2x₃... is not conserved because x₂² → x₃, but every state stays finite.
        let states = m.solve(&[3.0, 0.2, 4.0]);
        assert!(states.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn halving_step_changes_grid_values_little() {
        let theta = [2.0, 0.12, 7.0];
        let coarse = Stat5Model::with_synthetic_input(1e-4).solve(&theta);
        let fine = Stat5Model::new(EpoRInput::synthetic_default(), 1e-4, DEFAULT_STEP / 2.0)
            .unwrap()
            .solve(&theta);
        let mut worst = 0.0_f64;
        for (i, row) in coarse.chunks_exact(STATE_DIM).enumerate() {
            let other = &fine[2 * i * STATE_DIM..(2 * i + 1) * STATE_DIM];
            for (a, b) in row.iter().zip(other) {
                worst = worst.max((a - b).abs());
            }
        }
        // Kinks in the piecewise-linear input cap the observed order, so the
        // bound sits an order of magnitude under the smallest noise sd (1e-3).
        assert!(worst < 1e-4, "max change {worst}");
    }

    #[test]
    fn observations_are_smooth_across_grid_nodes() {
        use crate::dual::Dual;
        let m = Stat5Model::with_synthetic_input(1e-4);
        let theta = [2.0, 0.12, 7.0];
        let node = 20.0;
        let at = |t: f64| m.forward(&theta, &vec![Dual::variable(t, 0, 1); N_TIMES]).unwrap();
        let (left, right, exact) = (at(node - 1e-9), at(node + 1e-9), at(node));
        let series = m.observables(&theta).unwrap();
        let j = (node / m.step()) as usize;
        for k in [0, N_TIMES] {
            let (lv, rv) = (left[k].value(), right[k].value());
            assert!((lv - rv).abs() < 1e-8);
            let (ld, rd) = (left[k].tangent()[0], right[k].tangent()[0]);
            assert!((ld - rd).abs() < 1e-6 * (1.0 + ld.abs()), "{ld} vs {rd}");
        }
        assert!((exact[0].value() - series[0][j]).abs() < 1e-12);
        assert!((exact[N_TIMES].value() - series[2][j]).abs() < 1e-12);
    }

    #[test]
    fn box_transform_roundtrip() {
        let m = Stat5Model::with_synthetic_input(1e-4);
        let theta = [1.2, 0.07, 9.1];
        let back = m.from_unconstrained(&m.to_unconstrained(&theta));
        for (a, b) in theta.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_step() {
        assert!(Stat5Model::new(EpoRInput::synthetic_default(), 1e-4, 0.7).is_err());
        assert!(Stat5Model::new(EpoRInput::synthetic_default(), 0.0, 0.25).is_err());
    }
}
