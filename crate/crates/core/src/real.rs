//! Scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Floating point scalar the mean-field, entropy and Gini code is written against.
///
/// Implemented for `f32` and `f64`. The associated constants carry the
/// precision-dependent tolerances so that generic code never hard-codes an
/// `f64`-only threshold.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + Sum
    + for<'a> Sum<&'a Self>
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + std::ops::DivAssign
    + Debug
    + Display
    + std::fmt::LowerExp
    + Send
    + Sync
    + 'static
{
    /// Allowed deviation of a normalized mass from one.
    const MASS_TOL: f64;
    /// Smallest probability used inside logarithms and reciprocal weights.
    const PROB_FLOOR: f64;
    /// Negative round-off tolerated before clamping is reported loudly.
    const NEG_TOL: f64;

    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("usize representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite scalar")
    }
}

impl Real for f64 {
    const MASS_TOL: f64 = 1e-9;
    const PROB_FLOOR: f64 = 1e-300;
    const NEG_TOL: f64 = 1e-12;
}

impl Real for f32 {
    const MASS_TOL: f64 = 1e-4;
    const PROB_FLOOR: f64 = 1e-37;
    const NEG_TOL: f64 = 1e-6;
}

/// Compensated (Neumaier) summation.
pub fn sum_compensated<T: Real>(xs: impl IntoIterator<Item = T>) -> T {
    let mut sum = T::zero();
    let mut comp = T::zero();
    for x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_recovers_cancelled_terms() {
        let xs = [1.0, 1e100, 1.0, -1e100];
        assert_eq!(sum_compensated::<f64>(xs), 2.0);
    }

    #[test]
    fn literals_round_trip() {
        assert_eq!(<f32 as Real>::lit(0.5), 0.5f32);
        assert_eq!(<f64 as Real>::from_usize_lossy(7), 7.0);
    }
}
