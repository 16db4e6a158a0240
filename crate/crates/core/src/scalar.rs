//! Scalar abstraction shared by every numeric module.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating point scalar the library is generic over (`f32` or `f64`).
///
/// Sampling parameters are converted to `f64` at the random-number boundary;
/// everything that is stored or reported stays in `Self`.
pub trait Real:
    'static
    + Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + LowerExp
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
{
    /// Converts an `f64` literal. Panics only if the value is not representable,
    /// which cannot happen for finite literals in `f32`/`f64`.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal not representable")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("usize not representable")
    }

    #[inline]
    fn from_u64_lossy(n: u64) -> Self {
        Self::from_u64(n).expect("u64 not representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// `ln⁺ x = max(0, ln x)`.
    #[inline]
    fn ln_pos(self) -> Self {
        if self > Self::one() {
            self.ln()
        } else {
            Self::zero()
        }
    }

    /// `ln⁻ x = max(0, -ln x)`.
    #[inline]
    fn ln_neg(self) -> Self {
        if self < Self::one() {
            -self.ln()
        } else {
            Self::zero()
        }
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Value of a moment-type functional that may be infinite or not decidable by
/// bounded summation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(tag = "status", content = "value", rename_all = "snake_case")]
pub enum Extended<T> {
    Finite(T),
    Infinite,
    /// Summation hit its term cap before the tail bound converged.
    Undetermined,
}

impl<T: Real> Extended<T> {
    pub fn finite(self) -> Option<T> {
        match self {
            Extended::Finite(v) => Some(v),
            _ => None,
        }
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, Extended::Finite(_))
    }

    pub fn map<U>(self, f: impl FnOnce(T) -> U) -> Extended<U> {
        match self {
            Extended::Finite(v) => Extended::Finite(f(v)),
            Extended::Infinite => Extended::Infinite,
            Extended::Undetermined => Extended::Undetermined,
        }
    }

    /// Weighted sum of extended values; infinity dominates, then undetermined.
    pub fn weighted_sum<I: IntoIterator<Item = (T, Extended<T>)>>(parts: I) -> Extended<T> {
        let mut acc = T::zero();
        let mut undetermined = false;
        for (w, v) in parts {
            match v {
                Extended::Finite(x) => acc += w * x,
                Extended::Infinite if w > T::zero() => return Extended::Infinite,
                Extended::Infinite => {}
                Extended::Undetermined => undetermined = true,
            }
        }
        if undetermined {
            Extended::Undetermined
        } else {
            Extended::Finite(acc)
        }
    }
}

/// Logarithmically spaced grid with `per_decade` points per factor ten,
/// covering `[lo, hi]` inclusive.
pub fn log_grid<T: Real>(lo: T, hi: T, per_decade: usize) -> Vec<T> {
    assert!(lo > T::zero() && hi > lo && per_decade > 0);
    let decades = (hi / lo).log10();
    let n = (decades * T::from_usize_lossy(per_decade)).ceil().to_usize().unwrap_or(1).max(1);
    log_grid_n(lo, hi, n + 1)
}

/// Logarithmically spaced grid of exactly `n >= 2` points from `lo` to `hi`.
pub fn log_grid_n<T: Real>(lo: T, hi: T, n: usize) -> Vec<T> {
    assert!(n >= 2);
    let (l0, l1) = (lo.ln(), hi.ln());
    let step = (l1 - l0) / T::from_usize_lossy(n - 1);
    let mut out: Vec<T> = (0..n).map(|i| (l0 + step * T::from_usize_lossy(i)).exp()).collect();
    out[0] = lo;
    out[n - 1] = hi;
    out
}
