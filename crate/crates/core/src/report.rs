//! CSV artifact formatting: RFC 4180 via `csv`, reals with 17 significant
//! digits in scientific notation, no locale formatting.

use std::path::Path;

use crate::error::Result;

/// A real with 17 significant digits, enough to round-trip any `f64`.
pub fn real(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

pub fn reals(xs: &[f64]) -> impl Iterator<Item = String> + '_ {
    xs.iter().map(|&x| real(x))
}

/// Write a header and rows of pre-formatted fields.
pub fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

/// `prefix_0, …, prefix_{d−1}`.
pub fn indexed(prefix: &str, d: usize) -> impl Iterator<Item = String> + '_ {
    (0..d).map(move |k| format!("{prefix}_{k}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reals_round_trip() {
        for x in [0.1, -1.0 / 3.0, 1e-300, 6.02e23, 0.0] {
            assert_eq!(real(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(real(f64::NAN), "NaN");
    }
}
