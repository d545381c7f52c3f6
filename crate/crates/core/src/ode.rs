//! Fixed-step explicit Runge–Kutta integration (Kutta's 3/8 rule).

/// Integrate `y' = rhs(t, y)` from `t0` with `n_steps` steps of size `h`.
///
/// Returns the states at all `n_steps + 1` grid points, row-major
/// (`dim` values per grid point).
pub fn rk38<F>(mut rhs: F, t0: f64, y0: &[f64], h: f64, n_steps: usize) -> Vec<f64>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let dim = y0.len();
    let mut out = Vec::with_capacity(dim * (n_steps + 1));
    out.extend_from_slice(y0);
    let mut y = y0.to_vec();
    let mut k1 = vec![0.0; dim];
    let mut k2 = vec![0.0; dim];
    let mut k3 = vec![0.0; dim];
    let mut k4 = vec![0.0; dim];
    let mut tmp = vec![0.0; dim];
    for step in 0..n_steps {
        let t = t0 + step as f64 * h;
        rhs(t, &y, &mut k1);
        for i in 0..dim {
            tmp[i] = y[i] + h * k1[i] / 3.0;
        }
        rhs(t + h / 3.0, &tmp, &mut k2);
        for i in 0..dim {
            tmp[i] = y[i] + h * (k2[i] - k1[i] / 3.0);
        }
        rhs(t + 2.0 * h / 3.0, &tmp, &mut k3);
        for i in 0..dim {
            tmp[i] = y[i] + h * (k1[i] - k2[i] + k3[i]);
        }
        rhs(t + h, &tmp, &mut k4);
        for i in 0..dim {
            y[i] += h * (k1[i] + 3.0 * k2[i] + 3.0 * k3[i] + k4[i]) / 8.0;
        }
        out.extend_from_slice(&y);
    }
    out
}
