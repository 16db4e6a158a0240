//! Weight functions `φ` for weighted moments `E φ(W)`.

use crate::scalar::Real;

/// A nondecreasing weight `φ(x) = x^α L(x)` on `[0, ∞)` with `L` slowly
/// varying (or at least of lower order than any power).
pub trait Weight<T: Real>: Send + Sync {
    fn phi(&self, x: T) -> T;

    /// Power index `α` of the regular variation of `φ`.
    fn index(&self) -> T;

    /// `L(x) = φ(x) / x^α`.
    fn slow_part(&self, x: T) -> T {
        if x > T::zero() {
            self.phi(x) / x.powf(self.index())
        } else {
            T::one()
        }
    }

    fn label(&self) -> String;

    /// Least `x` with `φ(x) ≥ target` (bisection in log scale).
    fn level_for(&self, target: T) -> T {
        if target <= T::zero() {
            return T::zero();
        }
        let (mut lo, mut hi) = (T::lit(1e-12), T::one());
        while self.phi(hi) < target {
            lo = hi;
            hi *= T::lit(16.0);
            if !hi.is_finite() {
                return T::infinity();
            }
        }
        if self.phi(lo) >= target {
            return lo;
        }
        for _ in 0..200 {
            let mid = (lo * hi).sqrt();
            if mid <= lo || mid >= hi {
                break;
            }
            if self.phi(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    }
}

/// `φ(x) = x^α`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerWeight<T> {
    pub alpha: T,
}

impl<T: Real> Weight<T> for PowerWeight<T> {
    fn phi(&self, x: T) -> T {
        if x <= T::zero() {
            T::zero()
        } else {
            x.powf(self.alpha)
        }
    }
    fn index(&self) -> T {
        self.alpha
    }
    fn slow_part(&self, _x: T) -> T {
        T::one()
    }
    fn label(&self) -> String {
        format!("x^{}", self.alpha)
    }
}

/// `φ(x) = x ln⁺ x`, the Kesten–Stigum weight.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct XLogX;

impl<T: Real> Weight<T> for XLogX {
    fn phi(&self, x: T) -> T {
        x * x.ln_pos()
    }
    fn index(&self) -> T {
        T::one()
    }
    fn slow_part(&self, x: T) -> T {
        x.ln_pos()
    }
    fn label(&self) -> String {
        "x ln+ x".into()
    }
}

/// Bounded correction `x ℓ(x)` with `ℓ(x) = 1 - 1/(2x)` above 1 and `x/2`
/// below, so that `φ` is convex and `φ(√x)` concave.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BoundedCorrection;

impl BoundedCorrection {
    pub fn ell<T: Real>(x: T) -> T {
        let half = T::lit(0.5);
        if x > T::one() {
            T::one() - half / x
        } else {
            half * x.max(T::zero())
        }
    }
}

impl<T: Real> Weight<T> for BoundedCorrection {
    fn phi(&self, x: T) -> T {
        x.max(T::zero()) * Self::ell(x)
    }
    fn index(&self) -> T {
        T::one()
    }
    fn slow_part(&self, x: T) -> T {
        Self::ell(x)
    }
    fn label(&self) -> String {
        "x (1 - 1/(2x))".into()
    }
}

/// Arbitrary closure weight with a declared index.
pub struct FnWeight<F> {
    pub f: F,
    pub alpha: f64,
    pub name: String,
}

impl<T: Real, F: Fn(T) -> T + Send + Sync> Weight<T> for FnWeight<F> {
    fn phi(&self, x: T) -> T {
        (self.f)(x)
    }
    fn index(&self) -> T {
        T::lit(self.alpha)
    }
    fn label(&self) -> String {
        self.name.clone()
    }
}
