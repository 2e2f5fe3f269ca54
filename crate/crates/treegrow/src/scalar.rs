//! Scalar abstraction for the metric-measure layer.
//!
//! Distance matrices, probability weights and coupling computations are
//! generic over the scalar: `f64` for simulation output, `BigRational` for
//! the exact Gromov-Prokhorov oracle and exact ultrametric validation.

use num::bigint::BigInt;
use num::rational::BigRational;
use num::traits::{Num, Signed, ToPrimitive};

/// Scalar type for masses and distances in `[0, 1]`-ish ranges.
pub trait Scalar: Clone + PartialOrd + Num + Signed + std::fmt::Debug {
    /// Exact construction from a ratio of unsigned integers.
    fn from_ratio(num: u64, den: u64) -> Self;

    /// Lossy view, for reporting.
    fn to_f64(&self) -> f64;

    /// Slack for validation comparisons: zero for exact scalars.
    fn tolerance() -> Self;

    /// Slack for mass-normalization checks: zero for exact scalars.
    fn mass_tolerance() -> Self;

    fn from_f64_approx(x: f64) -> Self;
}

impl Scalar for f64 {
    fn from_ratio(num: u64, den: u64) -> Self {
        num as f64 / den as f64
    }

    fn to_f64(&self) -> f64 {
        *self
    }

    fn tolerance() -> Self {
        1e-12
    }

    fn mass_tolerance() -> Self {
        1e-9
    }

    fn from_f64_approx(x: f64) -> Self {
        x
    }
}

impl Scalar for f32 {
    fn from_ratio(num: u64, den: u64) -> Self {
        num as f32 / den as f32
    }

    fn to_f64(&self) -> f64 {
        f64::from(*self)
    }

    fn tolerance() -> Self {
        1e-5
    }

    fn mass_tolerance() -> Self {
        1e-4
    }

    fn from_f64_approx(x: f64) -> Self {
        x as f32
    }
}

impl Scalar for BigRational {
    fn from_ratio(num: u64, den: u64) -> Self {
        BigRational::new(BigInt::from(num), BigInt::from(den))
    }

    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }

    fn tolerance() -> Self {
        BigRational::new(BigInt::from(0), BigInt::from(1))
    }

    fn mass_tolerance() -> Self {
        BigRational::new(BigInt::from(0), BigInt::from(1))
    }

    /// Dyadic rationalization; exact for every finite `f64`.
    fn from_f64_approx(x: f64) -> Self {
        BigRational::from_float(x).expect("finite float")
    }
}

/// `max` for scalars that are only `PartialOrd` (floats).
pub fn smax<S: Scalar>(a: S, b: S) -> S {
    if a < b {
        b
    } else {
        a
    }
}

/// `min` counterpart of [`smax`].
pub fn smin<S: Scalar>(a: S, b: S) -> S {
    if a > b {
        b
    } else {
        a
    }
}
