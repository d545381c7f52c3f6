//! Vector forward-mode automatic differentiation.
//!
//! A [`Dual`] carries a primal value together with one tangent per design
//! dimension, so a single forward pass through a model yields the full
//! gradient with respect to the design. The [`Scalar`] trait abstracts over
//! `f64` and `Dual` so that models, likelihoods and estimators are written
//! once and evaluated either plainly or with derivatives.

use std::fmt;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

use arrayvec::ArrayVec;
use thiserror::Error;

/// Largest supported design dimension (tangent length).
pub const MAX_TANGENTS: usize = 16;

pub type Tangent = ArrayVec<f64, MAX_TANGENTS>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DualError {
    #[error("tangent length mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("design dimension {0} exceeds the supported maximum of {MAX_TANGENTS}")]
    TooManyTangents(usize),
    #[error("domain error in {op}: primal value {value}")]
    Domain { op: &'static str, value: f64 },
    #[error("non-finite evaluation at design component {index}: {message}")]
    Evaluation { index: usize, message: String },
}

/// Operations shared by plain reals and dual numbers.
///
/// Comparisons in generic code should go through [`Scalar::value`], which
/// returns the primal part only.
pub trait Scalar:
    Clone
    + fmt::Debug
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn value(&self) -> f64;
    /// A constant with the same tangent layout as `self`.
    fn lift(&self, v: f64) -> Self;
    fn exp(&self) -> Self;
    fn ln(&self) -> Self;
    fn sqrt(&self) -> Self;
    fn powi(&self, n: i32) -> Self;
    fn powf(&self, p: f64) -> Self;
    fn abs(&self) -> Self;
    fn tanh(&self) -> Self;

    fn square(&self) -> Self {
        self.clone() * self.clone()
    }
}

impl Scalar for f64 {
    #[inline]
    fn value(&self) -> f64 {
        *self
    }
    #[inline]
    fn lift(&self, v: f64) -> Self {
        v
    }
    #[inline]
    fn exp(&self) -> Self {
        f64::exp(*self)
    }
    #[inline]
    fn ln(&self) -> Self {
        f64::ln(*self)
    }
    #[inline]
    fn sqrt(&self) -> Self {
        f64::sqrt(*self)
    }
    #[inline]
    fn powi(&self, n: i32) -> Self {
        f64::powi(*self, n)
    }
    #[inline]
    fn powf(&self, p: f64) -> Self {
        f64::powf(*self, p)
    }
    #[inline]
    fn abs(&self) -> Self {
        f64::abs(*self)
    }
    #[inline]
    fn tanh(&self) -> Self {
        f64::tanh(*self)
    }
    #[inline]
    fn square(&self) -> Self {
        self * self
    }
}

/// A value with a tangent vector of partial derivatives.
#[derive(Clone, Debug, PartialEq)]
pub struct Dual {
    val: f64,
    tan: Tangent,
}

impl Dual {
    pub fn new(val: f64, tangent: &[f64]) -> Result<Self, DualError> {
        let tan = Tangent::try_from(tangent)
            .map_err(|_| DualError::TooManyTangents(tangent.len()))?;
        Ok(Dual { val, tan })
    }

    /// Constant with `dims` zero tangents.
    pub fn constant(val: f64, dims: usize) -> Self {
        assert!(dims <= MAX_TANGENTS, "design dimension {dims} > {MAX_TANGENTS}");
        let mut tan = Tangent::new();
        for _ in 0..dims {
            tan.push(0.0);
        }
        Dual { val, tan }
    }

    /// Independent variable `k` of `dims`.
    pub fn variable(val: f64, k: usize, dims: usize) -> Self {
        let mut d = Dual::constant(val, dims);
        d.tan[k] = 1.0;
        d
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.val
    }

    #[inline]
    pub fn tangent(&self) -> &[f64] {
        &self.tan
    }

    #[inline]
    pub fn dims(&self) -> usize {
        self.tan.len()
    }

    pub fn is_finite(&self) -> bool {
        self.val.is_finite() && self.tan.iter().all(|t| t.is_finite())
    }

    /// `f(self)` given `f(v)` and `f'(v)`.
    #[inline]
    fn chain(&self, val: f64, deriv: f64) -> Dual {
        let mut tan = self.tan.clone();
        for t in tan.iter_mut() {
            *t *= deriv;
        }
        Dual { val, tan }
    }

    fn check_dims(&self, other: &Dual) -> Result<(), DualError> {
        if self.tan.len() == other.tan.len() {
            Ok(())
        } else {
            Err(DualError::DimensionMismatch(self.tan.len(), other.tan.len()))
        }
    }

    pub fn try_add(&self, other: &Dual) -> Result<Dual, DualError> {
        self.check_dims(other)?;
        Ok(self.clone() + other.clone())
    }

    pub fn try_sub(&self, other: &Dual) -> Result<Dual, DualError> {
        self.check_dims(other)?;
        Ok(self.clone() - other.clone())
    }

    pub fn try_mul(&self, other: &Dual) -> Result<Dual, DualError> {
        self.check_dims(other)?;
        Ok(self.clone() * other.clone())
    }

    pub fn try_div(&self, other: &Dual) -> Result<Dual, DualError> {
        self.check_dims(other)?;
        if other.val == 0.0 {
            return Err(DualError::Domain { op: "div", value: other.val });
        }
        Ok(self.clone() / other.clone())
    }

    pub fn try_ln(&self) -> Result<Dual, DualError> {
        if self.val <= 0.0 || self.val.is_nan() {
            return Err(DualError::Domain { op: "ln", value: self.val });
        }
        Ok(Scalar::ln(self))
    }

    pub fn try_sqrt(&self) -> Result<Dual, DualError> {
        if self.val < 0.0 || self.val.is_nan() {
            return Err(DualError::Domain { op: "sqrt", value: self.val });
        }
        Ok(Scalar::sqrt(self))
    }

    /// `self^exponent` for a positive base.
    pub fn try_pow(&self, exponent: &Dual) -> Result<Dual, DualError> {
        self.check_dims(exponent)?;
        if self.val <= 0.0 {
            return Err(DualError::Domain { op: "pow", value: self.val });
        }
        Ok(self.pow(exponent))
    }

    /// `self^exponent` via `exp(exponent * ln self)`; base must be positive.
    pub fn pow(&self, exponent: &Dual) -> Dual {
        Scalar::exp(&(exponent.clone() * Scalar::ln(self)))
    }
}

impl Scalar for Dual {
    #[inline]
    fn value(&self) -> f64 {
        self.val
    }
    #[inline]
    fn lift(&self, v: f64) -> Self {
        Dual::constant(v, self.tan.len())
    }
    fn exp(&self) -> Self {
        let e = self.val.exp();
        self.chain(e, e)
    }
    fn ln(&self) -> Self {
        self.chain(self.val.ln(), 1.0 / self.val)
    }
    fn sqrt(&self) -> Self {
        let s = self.val.sqrt();
        self.chain(s, 0.5 / s)
    }
    fn powi(&self, n: i32) -> Self {
        let d = if n == 0 { 0.0 } else { f64::from(n) * self.val.powi(n - 1) };
        self.chain(self.val.powi(n), d)
    }
    fn powf(&self, p: f64) -> Self {
        let d = if p == 0.0 { 0.0 } else { p * self.val.powf(p - 1.0) };
        self.chain(self.val.powf(p), d)
    }
    /// Subgradient convention: the tangent at 0 is zero.
    fn abs(&self) -> Self {
        let s = if self.val > 0.0 {
            1.0
        } else if self.val < 0.0 {
            -1.0
        } else {
            0.0
        };
        self.chain(self.val.abs(), s)
    }
    fn tanh(&self) -> Self {
        let t = self.val.tanh();
        self.chain(t, 1.0 - t * t)
    }
    fn square(&self) -> Self {
        self.chain(self.val * self.val, 2.0 * self.val)
    }
}

impl fmt::Display for Dual {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} + {:?}ε", self.val, self.tan.as_slice())
    }
}

#[inline]
fn assert_same(a: &Dual, b: &Dual) {
    assert_eq!(
        a.tan.len(),
        b.tan.len(),
        "dual tangent length mismatch ({} vs {})",
        a.tan.len(),
        b.tan.len()
    );
}

impl Add for Dual {
    type Output = Dual;
    #[inline]
    fn add(mut self, rhs: Dual) -> Dual {
        assert_same(&self, &rhs);
        self.val += rhs.val;
        for (a, b) in self.tan.iter_mut().zip(rhs.tan.iter()) {
            *a += b;
        }
        self
    }
}

impl Sub for Dual {
    type Output = Dual;
    #[inline]
    fn sub(mut self, rhs: Dual) -> Dual {
        assert_same(&self, &rhs);
        self.val -= rhs.val;
        for (a, b) in self.tan.iter_mut().zip(rhs.tan.iter()) {
            *a -= b;
        }
        self
    }
}

impl Mul for Dual {
    type Output = Dual;
    #[inline]
    fn mul(mut self, rhs: Dual) -> Dual {
        assert_same(&self, &rhs);
        for (a, b) in self.tan.iter_mut().zip(rhs.tan.iter()) {
            *a = *a * rhs.val + self.val * b;
        }
        self.val *= rhs.val;
        self
    }
}

impl Div for Dual {
    type Output = Dual;
    #[inline]
    fn div(mut self, rhs: Dual) -> Dual {
        assert_same(&self, &rhs);
        let inv = 1.0 / rhs.val;
        let q = self.val * inv;
        for (a, b) in self.tan.iter_mut().zip(rhs.tan.iter()) {
            *a = (*a - q * b) * inv;
        }
        self.val = q;
        self
    }
}

impl Neg for Dual {
    type Output = Dual;
    #[inline]
    fn neg(mut self) -> Dual {
        self.val = -self.val;
        for t in self.tan.iter_mut() {
            *t = -*t;
        }
        self
    }
}

impl Add<f64> for Dual {
    type Output = Dual;
    #[inline]
    fn add(mut self, rhs: f64) -> Dual {
        self.val += rhs;
        self
    }
}

impl Sub<f64> for Dual {
    type Output = Dual;
    #[inline]
    fn sub(mut self, rhs: f64) -> Dual {
        self.val -= rhs;
        self
    }
}

impl Mul<f64> for Dual {
    type Output = Dual;
    #[inline]
    fn mul(mut self, rhs: f64) -> Dual {
        self.val *= rhs;
        for t in self.tan.iter_mut() {
            *t *= rhs;
        }
        self
    }
}

impl Div<f64> for Dual {
    type Output = Dual;
    #[inline]
    fn div(self, rhs: f64) -> Dual {
        self * (1.0 / rhs)
    }
}

impl AddAssign for Dual {
    fn add_assign(&mut self, rhs: Dual) {
        assert_same(self, &rhs);
        self.val += rhs.val;
        for (a, b) in self.tan.iter_mut().zip(rhs.tan.iter()) {
            *a += b;
        }
    }
}

impl SubAssign for Dual {
    fn sub_assign(&mut self, rhs: Dual) {
        assert_same(self, &rhs);
        self.val -= rhs.val;
        for (a, b) in self.tan.iter_mut().zip(rhs.tan.iter()) {
            *a -= b;
        }
    }
}

impl MulAssign<f64> for Dual {
    fn mul_assign(&mut self, rhs: f64) {
        self.val *= rhs;
        for t in self.tan.iter_mut() {
            *t *= rhs;
        }
    }
}

impl PartialOrd for Dual {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        self.val.partial_cmp(&other.val)
    }
}

/// Seed a design vector: component `k` gets the `k`-th basis tangent.
pub fn lift_design(design: &[f64]) -> Result<Vec<Dual>, DualError> {
    let d = design.len();
    if d > MAX_TANGENTS {
        return Err(DualError::TooManyTangents(d));
    }
    Ok(design
        .iter()
        .enumerate()
        .map(|(k, &v)| Dual::variable(v, k, d))
        .collect())
}

/// Numerically stable `ln Σ exp(x_i)`. Entries at −∞ drop out; an all −∞
/// input yields −∞. Panics on an empty slice.
pub fn log_sum_exp<S: Scalar>(xs: &[S]) -> S {
    let first = xs.first().expect("log_sum_exp of an empty slice");
    let mut max = f64::NEG_INFINITY;
    for x in xs {
        if x.value() > max {
            max = x.value();
        }
    }
    if max == f64::NEG_INFINITY {
        return first.lift(f64::NEG_INFINITY);
    }
    let mut acc = first.lift(0.0);
    for x in xs {
        if x.value() == f64::NEG_INFINITY {
            continue;
        }
        acc = acc + (x.clone() - max).exp();
    }
    acc.ln() + max
}

/// Max relative error between the dual gradient of `f` at `design` and
/// central finite differences with step `h`:
/// `max_k |dual_k − fd_k| / (|fd_k| + 1e-12)`.
pub fn grad_check<F, E>(f: F, design: &[f64], h: f64) -> Result<f64, E>
where
    F: Fn(&[Dual]) -> Result<Dual, E>,
    E: From<DualError>,
{
    assert!(h > 0.0, "finite-difference step must be positive");
    let lifted = lift_design(design)?;
    let at = f(&lifted)?;
    let mut worst = 0.0_f64;
    for k in 0..design.len() {
        let mut plus = design.to_vec();
        let mut minus = design.to_vec();
        plus[k] += h;
        minus[k] -= h;
        let fp = f(&lift_design(&plus)?)?.value();
        let fm = f(&lift_design(&minus)?)?.value();
        let fd = (fp - fm) / (2.0 * h);
        let err = (at.tangent()[k] - fd).abs() / (fd.abs() + 1e-12);
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Default central-difference step for a design component.
pub fn default_fd_step(x: f64) -> f64 {
    1e-5 * (1.0 + x.abs())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(v: f64, t: &[f64]) -> Dual {
        Dual::new(v, t).unwrap()
    }

    #[test]
    fn lift_seeds_basis() {
        let l = lift_design(&[0.5]).unwrap();
        assert_eq!(l[0], d(0.5, &[1.0]));
        let l = lift_design(&[1.0, 2.0]).unwrap();
        assert_eq!(l[0].tangent(), &[1.0, 0.0]);
        assert_eq!(l[1].tangent(), &[0.0, 1.0]);
        let s = l[0].clone() + l[1].clone();
        assert_eq!(s, d(3.0, &[1.0, 1.0]));
    }

    #[test]
    fn elementary_rules() {
        assert_eq!(Scalar::exp(&d(0.0, &[1.0])), d(1.0, &[1.0]));
        assert_eq!(Scalar::ln(&d(1.0, &[2.0])), d(0.0, &[2.0]));
        assert_eq!(d(2.0, &[1.0, 0.0]) * d(3.0, &[0.0, 1.0]), d(6.0, &[3.0, 2.0]));
        let q = d(6.0, &[1.0, 0.0]) / d(3.0, &[0.0, 1.0]);
        assert!((q.value() - 2.0).abs() < 1e-15);
        assert!((q.tangent()[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((q.tangent()[1] + 6.0 / 9.0).abs() < 1e-15);
        let s = Scalar::sqrt(&d(4.0, &[1.0]));
        assert_eq!(s, d(2.0, &[0.25]));
        let t = Scalar::tanh(&d(0.0, &[3.0]));
        assert_eq!(t, d(0.0, &[3.0]));
        let p = Scalar::powi(&d(2.0, &[1.0]), 3);
        assert_eq!(p, d(8.0, &[12.0]));
        let p = d(2.0, &[1.0]).pow(&d(3.0, &[0.0]));
        assert!((p.value() - 8.0).abs() < 1e-12 && (p.tangent()[0] - 12.0).abs() < 1e-12);
    }

    #[test]
    fn abs_convention() {
        assert_eq!(Scalar::abs(&d(-2.0, &[1.0])), d(2.0, &[-1.0]));
        assert_eq!(Scalar::abs(&d(0.0, &[1.0])), d(0.0, &[0.0]));
        assert_eq!(Scalar::abs(&d(3.0, &[2.0])), d(3.0, &[2.0]));
    }

    #[test]
    fn comparisons_use_primal() {
        assert!(d(1.0, &[100.0]) < d(2.0, &[-100.0]));
        assert_eq!(
            d(1.0, &[1.0]).partial_cmp(&d(1.0, &[2.0])),
            Some(std::cmp::Ordering::Equal)
        );
    }

    #[test]
    fn mismatched_lengths_error() {
        let a = d(1.0, &[1.0]);
        let b = d(1.0, &[1.0, 0.0]);
        assert_eq!(a.try_add(&b), Err(DualError::DimensionMismatch(1, 2)));
        assert!(a.try_mul(&b).is_err());
    }

    #[test]
    #[should_panic(expected = "mismatch")]
    fn mismatched_operator_panics() {
        let _ = d(1.0, &[1.0]) + d(1.0, &[1.0, 0.0]);
    }

    #[test]
    fn domain_errors() {
        assert!(d(0.0, &[1.0]).try_ln().is_err());
        assert!(d(-1.0, &[1.0]).try_sqrt().is_err());
        assert!(d(1.0, &[1.0]).try_div(&d(0.0, &[0.0])).is_err());
        assert!(d(-1.0, &[1.0]).try_pow(&d(2.0, &[0.0])).is_err());
        assert!(d(2.0, &[1.0]).try_ln().is_ok());
    }

    #[test]
    fn too_many_tangents() {
        assert!(lift_design(&[0.0; MAX_TANGENTS + 1]).is_err());
    }

    #[test]
    fn quadratic_grad_check() {
        let err = grad_check::<_, DualError>(|l| Ok(l[0].square()), &[3.0], 1e-5).unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn log_sum_exp_stable() {
        let xs = [d(1000.0, &[1.0]), d(1000.0, &[0.0])];
        let r = log_sum_exp(&xs);
        assert!((r.value() - (1000.0 + 2f64.ln())).abs() < 1e-9);
        assert!((r.tangent()[0] - 0.5).abs() < 1e-12);
        let xs = [f64::NEG_INFINITY, 0.0];
        assert_eq!(log_sum_exp(&xs), 0.0);
        let xs = [f64::NEG_INFINITY, f64::NEG_INFINITY];
        assert_eq!(log_sum_exp(&xs), f64::NEG_INFINITY);
    }

    #[test]
    fn primal_matches_plain_evaluation() {
        fn f<S: Scalar>(x: &S, y: &S) -> S {
            (x.clone() * y.clone() + x.exp()).ln() / (y.square() + 1.0) - x.abs().sqrt()
        }
        let (x, y) = (0.7_f64, -1.3_f64);
        let l = lift_design(&[x, y]).unwrap();
        assert_eq!(f(&l[0], &l[1]).value(), f(&x, &y));
    }
}
