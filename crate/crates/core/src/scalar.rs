//! The floating-point scalar every computation in this crate is generic over.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// A real scalar type usable for measures, kernels and flows.
///
/// Besides the arithmetic from [`Float`], each implementation fixes the
/// numerical tolerances that depend on its precision.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Unit-sum tolerance for measures and matrix rows at rest.
    const REST_TOL: f64;
    /// Unit-sum tolerance for raw values coming from outside.
    const INGEST_TOL: f64;
    /// TV values at or below this are treated as round-off when fitting logs.
    const TV_FLOOR: f64;
    /// Two fixed points closer than this in TV count as the same measure.
    const UNIQUE_TOL: f64;

    /// Converts an `f64` literal. Panics only if the value is not representable,
    /// which cannot happen for finite inputs on `f32`/`f64`.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("finite literal")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite scalar")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("representable count")
    }
}

impl Scalar for f64 {
    const REST_TOL: f64 = 1e-12;
    const INGEST_TOL: f64 = 1e-9;
    const TV_FLOOR: f64 = 1e-13;
    const UNIQUE_TOL: f64 = 1e-8;
}

impl Scalar for f32 {
    const REST_TOL: f64 = 1e-5;
    const INGEST_TOL: f64 = 1e-4;
    const TV_FLOOR: f64 = 1e-6;
    const UNIQUE_TOL: f64 = 1e-4;
}

/// Neumaier-compensated summation.
pub fn compensated_sum<T: Scalar, I: IntoIterator<Item = T>>(values: I) -> T {
    let mut sum = T::zero();
    let mut carry = T::zero();
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            carry = carry + ((sum - t) + v);
        } else {
            carry = carry + ((v - t) + sum);
        }
        sum = t;
    }
    sum + carry
}

/// Dot product with compensated accumulation.
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    compensated_sum(a.iter().zip(b).map(|(&x, &y)| x * y))
}

/// Ordinary least squares of `y` on `x`; returns `(slope, intercept, r_squared)`.
///
/// When `y` has zero spread the fit is exact but explains nothing, so
/// `r_squared` is reported as 0.
pub(crate) fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        sxy += (a - mx) * (b - my);
        syy += (b - my) * (b - my);
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let r2 = if syy > 0.0 && sxx > 0.0 {
        ((sxy * sxy) / (sxx * syy)).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (slope, intercept, r2)
}
