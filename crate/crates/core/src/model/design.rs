use rand::Rng;

use crate::error::{Error, Result};

/// A design vector together with its box constraints.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    values: Vec<f64>,
    bounds: Vec<(f64, f64)>,
}

impl Design {
    pub fn new(values: Vec<f64>, bounds: Vec<(f64, f64)>) -> Result<Self> {
        if values.len() != bounds.len() {
            return Err(Error::Design(format!(
                "{} values but {} bounds",
                values.len(),
                bounds.len()
            )));
        }
        for (k, (&v, &(lo, hi))) in values.iter().zip(&bounds).enumerate() {
            if !(lo <= hi) {
                return Err(Error::Design(format!("bound {k}: lo {lo} > hi {hi}")));
            }
            if !v.is_finite() || v < lo || v > hi {
                return Err(Error::Design(format!("component {k} = {v} outside [{lo}, {hi}]")));
            }
        }
        Ok(Design { values, bounds })
    }

    /// Uniform draw inside the box.
    pub fn random<R: Rng + ?Sized>(bounds: &[(f64, f64)], rng: &mut R) -> Self {
        let values = bounds
            .iter()
            .map(|&(lo, hi)| lo + (hi - lo) * rng.random::<f64>())
            .collect();
        Design { values, bounds: bounds.to_vec() }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Replace the values with their componentwise clip onto the box.
    pub fn set_projected(&mut self, proposal: &[f64]) {
        for ((v, &p), &(lo, hi)) in self.values.iter_mut().zip(proposal).zip(&self.bounds) {
            *v = p.clamp(lo, hi);
        }
    }

    pub fn is_feasible(&self) -> bool {
        self.values
            .iter()
            .zip(&self.bounds)
            .all(|(&v, &(lo, hi))| v >= lo && v <= hi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_bounds() {
        assert!(Design::new(vec![1.5], vec![(0.0, 1.0)]).is_err());
        assert!(Design::new(vec![0.5], vec![(1.0, 0.0)]).is_err());
        assert!(Design::new(vec![0.5, 0.1], vec![(0.0, 1.0)]).is_err());
        assert!(Design::new(vec![f64::NAN], vec![(0.0, 1.0)]).is_err());
    }

    #[test]
    fn projection_lands_on_bounds() {
        let mut d = Design::new(vec![0.5, 0.5], vec![(0.0, 1.0), (0.0, 1.0)]).unwrap();
        d.set_projected(&[1.7, -0.2]);
        assert_eq!(d.values(), &[1.0, 0.0]);
        assert!(d.is_feasible());
    }
}
