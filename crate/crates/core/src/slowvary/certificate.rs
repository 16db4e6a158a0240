//! Numerical convexity/concavity certificates from second divided differences.

use serde::{Deserialize, Serialize};

use crate::scalar::Real;

pub const CERT_MIN_POINTS: usize = 256;
pub const CERT_REL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "map", content = "beta", rename_all = "snake_case")]
pub enum Transform<T> {
    Identity,
    /// `x ↦ f(x^{1/β})`.
    Root(T),
}

impl<T: Real> Transform<T> {
    pub fn apply(&self, x: T) -> T {
        match *self {
            Transform::Identity => x,
            Transform::Root(b) if b == T::lit(2.0) => x.sqrt(),
            Transform::Root(b) => x.powf(b.recip()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Convex,
    Concave,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real"))]
pub struct Certificate<T: Real> {
    pub passed: bool,
    pub direction: Direction,
    pub transform: Transform<T>,
    pub points: usize,
    /// Most adverse signed second difference relative to its scale
    /// (negative means a violation in the requested direction).
    pub worst_relative: T,
    /// First triple of grid points violating the requested shape.
    pub witness: Option<[T; 3]>,
}

/// Checks the sign of the second divided difference of `x ↦ f(transform(x))`
/// on every consecutive triple of `grid`. A triple passes if the signed
/// difference is at least `-rel_tol` times the sum of the magnitudes of its
/// three terms.
pub fn convexity_certificate<T: Real>(
    f: impl Fn(T) -> T,
    transform: Transform<T>,
    grid: &[T],
    direction: Direction,
    rel_tol: T,
) -> Certificate<T> {
    assert!(grid.len() >= CERT_MIN_POINTS, "certificate grid needs at least {CERT_MIN_POINTS} points");
    assert!(grid.windows(2).all(|w| w[0] < w[1]), "certificate grid must be strictly increasing");
    let sign = match direction {
        Direction::Convex => T::one(),
        Direction::Concave => -T::one(),
    };
    let vals: Vec<T> = grid.iter().map(|&x| f(transform.apply(x))).collect();
    let mut worst = T::infinity();
    let mut witness = None;
    for i in 1..grid.len() - 1 {
        let (x0, x1, x2) = (grid[i - 1], grid[i], grid[i + 1]);
        let t0 = vals[i - 1] / ((x0 - x1) * (x0 - x2));
        let t1 = vals[i] / ((x1 - x0) * (x1 - x2));
        let t2 = vals[i + 1] / ((x2 - x0) * (x2 - x1));
        let scale = t0.abs() + t1.abs() + t2.abs();
        let d = sign * (t0 + t1 + t2);
        let rel = if scale > T::zero() { d / scale } else { T::zero() };
        if !(rel >= -rel_tol) && witness.is_none() {
            witness = Some([x0, x1, x2]);
        }
        if rel < worst || rel.is_nan() {
            worst = rel;
        }
    }
    Certificate { passed: witness.is_none(), direction, transform, points: grid.len(), worst_relative: worst, witness }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::log_grid_n;

    fn grid() -> Vec<f64> {
        log_grid_n(1e-3, 1e9, 512)
    }

    #[test]
    fn examples() {
        let sq = |x: f64| x * x;
        assert!(convexity_certificate(sq, Transform::Identity, &grid(), Direction::Convex, 1e-9).passed);
        let c = convexity_certificate(f64::sqrt, Transform::Identity, &grid(), Direction::Convex, 1e-9);
        assert!(!c.passed);
        let w = c.witness.unwrap();
        assert!(w[0] < w[1] && w[1] < w[2]);
        let lin = convexity_certificate(sq, Transform::Root(2.0), &grid(), Direction::Concave, 1e-9);
        assert!(lin.passed);
        assert!(lin.worst_relative.abs() < 1e-9);
    }

    #[test]
    #[should_panic]
    fn short_grid_is_rejected() {
        convexity_certificate(|x: f64| x, Transform::Identity, &log_grid_n(1.0, 2.0, 10), Direction::Convex, 1e-9);
    }
}
