//! Shape-correcting constructions: a convex replacement `φ₁ ∼ φ` of
//! `φ(x) = x^α ℓ(x)` whose composition with `x^{1/β}` is also convex, and a
//! concave-compatible correction `ℓ₁` of a concave increasing `ℓ` with
//! `φ₁ = ∫₀ˣ ℓ₁` convex and `φ₁(√x)` concave.

use serde::{Deserialize, Serialize};

use super::certificate::{convexity_certificate, Direction, Transform, CERT_REL_TOL};
use super::{SlowVaryError, SlowVaryFn, WeightFn};
use crate::quad::{integrate, integrate_log, QuadConfig};
use crate::scalar::{log_grid, log_grid_n, Real};
use crate::weight::Weight;

/// Largest probe for the convexification threshold.
pub const THRESHOLD_PROBE_CAP: f64 = 1e9;
const THRESHOLD_PROBES_PER_DECADE: usize = 16;
/// The cumulative-integral table covers `[a, a·2^k]` up to this bound.
const TABLE_TOP: f64 = 1e15;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Integrand<T> {
    /// `α t^{α-1} ℓ(t)`.
    PowerEll { alpha: T, ell: SlowVaryFn<T> },
    /// `ℓ(t)`.
    Ell { ell: SlowVaryFn<T> },
}

impl<T: Real> Integrand<T> {
    fn eval(&self, t: T) -> T {
        match self {
            Integrand::PowerEll { alpha, ell } => *alpha * t.powf(*alpha - T::one()) * ell.eval(t),
            Integrand::Ell { ell } => ell.eval(t),
        }
    }

    fn closed(&self, lo: T, x: T) -> Option<T> {
        match self {
            Integrand::PowerEll { alpha, ell: SlowVaryFn::Const { c } } => {
                Some(*c * (x.powf(*alpha) - lo.powf(*alpha)))
            }
            Integrand::PowerEll { alpha, ell: SlowVaryFn::Karamata { eps: super::Epsilon::Zero, .. } } => {
                Some(x.powf(*alpha) - lo.powf(*alpha))
            }
            Integrand::PowerEll { .. } => None,
            Integrand::Ell { ell } => ell.antiderivative(lo, x),
        }
    }

    fn quad(&self, lo: T, x: T) -> Result<T, SlowVaryError> {
        if let Some(v) = self.closed(lo, x) {
            return Ok(v);
        }
        let f = |t: T| self.eval(t);
        Ok(if x <= lo + lo {
            integrate(f, lo, x, &QuadConfig::default())?
        } else {
            integrate_log(f, lo, x, &QuadConfig::default())?
        })
    }
}

/// `inner_coef · x^{inner_exp}` on `[0, a]`, and
/// `base + linear·(x - a) + ∫_a^x g(t) dt` above `a`, where `base` equals the
/// inner piece at `a`.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseFn<T: Real> {
    threshold: T,
    inner_coef: T,
    inner_exp: T,
    base: T,
    linear: T,
    integrand: Integrand<T>,
    nodes: Vec<T>,
    cum: Vec<T>,
}

impl<T: Real> PiecewiseFn<T> {
    fn build(
        threshold: T,
        inner_coef: T,
        inner_exp: T,
        linear: T,
        integrand: Integrand<T>,
    ) -> Result<Self, SlowVaryError> {
        let base = inner_coef * threshold.powf(inner_exp);
        let mut nodes = vec![threshold];
        let mut cum = vec![T::zero()];
        if integrand.closed(threshold, threshold + threshold).is_none() {
            let top = T::lit(TABLE_TOP).max(threshold * T::lit(4.0));
            let mut x = threshold;
            let mut acc = T::zero();
            while x < top {
                let next = x + x;
                acc += integrand.quad(x, next)?;
                nodes.push(next);
                cum.push(acc);
                x = next;
            }
        }
        Ok(Self { threshold, inner_coef, inner_exp, base, linear, integrand, nodes, cum })
    }

    pub fn threshold(&self) -> T {
        self.threshold
    }

    fn integral_from_threshold(&self, x: T) -> Result<T, SlowVaryError> {
        if self.nodes.len() == 1 {
            return self.integrand.quad(self.threshold, x);
        }
        let i = self.nodes.partition_point(|&n| n <= x) - 1;
        let node = self.nodes[i];
        let tail = if x == node { T::zero() } else { self.integrand.quad(node, x)? };
        Ok(self.cum[i] + tail)
    }

    /// Evaluation; quadrature failures surface as an error.
    pub fn try_eval(&self, x: T) -> Result<T, SlowVaryError> {
        if x <= self.threshold {
            return Ok(self.inner_coef * x.max(T::zero()).powf(self.inner_exp));
        }
        Ok(self.base + self.linear * (x - self.threshold) + self.integral_from_threshold(x)?)
    }

    /// Evaluation; quadrature failures become NaN, which every certificate rejects.
    pub fn eval(&self, x: T) -> T {
        self.try_eval(x).unwrap_or_else(|_| T::nan())
    }

    /// Relative gap between the two pieces at the threshold.
    pub fn continuity_gap(&self) -> T {
        let inner = self.inner_coef * self.threshold.powf(self.inner_exp);
        let outer = self.try_eval_outer(self.threshold);
        (inner - outer).abs() / inner.abs().max(T::min_positive_value())
    }

    fn try_eval_outer(&self, x: T) -> T {
        self.base + self.linear * (x - self.threshold) + self.integral_from_threshold(x).unwrap_or_else(|_| T::nan())
    }
}

/// Output of [`convexify`].
#[derive(Debug, Clone, PartialEq)]
pub struct Convexified<T: Real> {
    pub weight: WeightFn<T>,
    pub beta: T,
    pub phi1: PiecewiseFn<T>,
}

impl<T: Real> Convexified<T> {
    pub fn threshold(&self) -> T {
        self.phi1.threshold()
    }

    pub fn ratio(&self, x: T) -> T {
        self.phi1.eval(x) / self.weight.phi(x)
    }
}

/// Convex replacement of `φ(x) = x^α ℓ(x)` for `1 < β ≤ 2`, `β < α`.
///
/// The threshold is twice the least probe point `≥ max(1, a0)` beyond which
/// `α - β + ε(x) > 0` holds at every later probe up to [`THRESHOLD_PROBE_CAP`].
/// Below it `φ₁(x) = x^α ℓ(a)`; above, `φ₁(x) = a^α ℓ(a) + α ∫_a^x t^{α-1} ℓ(t) dt`.
pub fn convexify<T: Real>(weight: &WeightFn<T>, beta: T) -> Result<Convexified<T>, SlowVaryError> {
    let alpha = weight.alpha;
    if !(alpha > T::one()) {
        return Err(SlowVaryError::Invalid(format!("alpha must exceed 1, got {alpha}")));
    }
    if !(beta > T::one() && beta <= T::lit(2.0) && beta < alpha) {
        return Err(SlowVaryError::Invalid(format!("beta must lie in (1, 2] and below alpha, got {beta}")));
    }
    let ell = weight.ell;
    ell.validate()?;
    let start = T::one().max(ell.a0());
    let cap = T::lit(THRESHOLD_PROBE_CAP);
    let probes = log_grid(start, cap.max(start * T::lit(10.0)), THRESHOLD_PROBES_PER_DECADE);
    let ok = |x: T| alpha - beta + ell.epsilon(x) > T::zero();
    if !ok(*probes.last().expect("nonempty grid")) {
        return Err(SlowVaryError::ThresholdNotFound { cap: THRESHOLD_PROBE_CAP });
    }
    let first_good = probes.iter().rposition(|&x| !ok(x)).map_or(0, |i| i + 1);
    let a = probes[first_good] * T::lit(2.0);
    let phi1 = PiecewiseFn::build(a, ell.eval(a), alpha, T::zero(), Integrand::PowerEll { alpha, ell })?;
    Ok(Convexified { weight: *weight, beta, phi1 })
}

/// Output of [`concavify`].
#[derive(Debug, Clone, PartialEq)]
pub struct Concavified<T: Real> {
    pub ell: SlowVaryFn<T>,
    pub threshold: T,
    /// `ℓ'(a)`.
    pub slope: T,
    /// `c₀ = ℓ'(a) a - ℓ(a)`.
    pub c0: T,
    pub phi1: PiecewiseFn<T>,
}

impl<T: Real> Concavified<T> {
    /// `ℓ₁(x) = ℓ'(a) x` on `[0, a]`, `ℓ(x) + c₀` above.
    pub fn ell1(&self, x: T) -> T {
        if x <= self.threshold {
            self.slope * x.max(T::zero())
        } else {
            self.ell.eval(x) + self.c0
        }
    }
}

fn concavity_probe_grid<T: Real>(a0: T) -> Vec<T> {
    let lo = if a0 > T::zero() { a0 * T::lit(1.001) } else { T::lit(1e-3) };
    log_grid_n(lo, T::lit(1e9).max(lo * T::lit(1e3)), 512)
}

/// Concave-compatible correction of a positive increasing `ℓ` that is
/// concave on `(a0, ∞)`, with threshold `a = max(1, 2 a0)`.
pub fn concavify<T: Real>(ell: &SlowVaryFn<T>) -> Result<Concavified<T>, SlowVaryError> {
    ell.validate()?;
    let a0 = ell.a0();
    let grid = concavity_probe_grid(a0);
    let cert =
        convexity_certificate(|x| ell.eval(x), Transform::Identity, &grid, Direction::Concave, T::lit(CERT_REL_TOL));
    if let Some(w) = cert.witness {
        return Err(SlowVaryError::NotConcave { witness: w.map(|x| x.as_f64()) });
    }
    if let Some(win) = grid.windows(2).find(|w| ell.eval(w[1]) < ell.eval(w[0])) {
        return Err(SlowVaryError::NotIncreasing { x: win[1].as_f64() });
    }
    let a = T::one().max(a0 + a0);
    let slope = ell.derivative(a);
    if !(slope > T::zero()) {
        return Err(SlowVaryError::NotIncreasing { x: a.as_f64() });
    }
    let c0 = slope * a - ell.eval(a);
    let phi1 = PiecewiseFn::build(a, T::lit(0.5) * slope, T::lit(2.0), c0, Integrand::Ell { ell: *ell })?;
    Ok(Concavified { ell: *ell, threshold: a, slope, c0, phi1 })
}

/// Piecewise-linear tabulation, linear through the origin below the first node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real"))]
pub struct TabulatedFn<T: Real> {
    pub xs: Vec<T>,
    pub ys: Vec<T>,
}

impl<T: Real> TabulatedFn<T> {
    pub fn eval(&self, x: T) -> T {
        let n = self.xs.len();
        if x <= self.xs[0] {
            return self.ys[0] * x.max(T::zero()) / self.xs[0];
        }
        if x >= self.xs[n - 1] {
            let s = (self.ys[n - 1] - self.ys[n - 2]) / (self.xs[n - 1] - self.xs[n - 2]);
            return self.ys[n - 1] + s * (x - self.xs[n - 1]);
        }
        let i = self.xs.partition_point(|&v| v <= x) - 1;
        let t = (x - self.xs[i]) / (self.xs[i + 1] - self.xs[i]);
        self.ys[i] + t * (self.ys[i + 1] - self.ys[i])
    }
}

/// Concave regularisation of `ℓ`: `ψ(x) = inf{ℓ'(t) : 1 ≤ t ≤ x}` (with
/// `ψ = ℓ'(1)` below 1) and `ℓ₁(x) = ∫₀ˣ ψ`, tabulated on a log grid over
/// `[1, x_max]`. `ψ` is nonincreasing, so `ℓ₁` is concave.
pub fn concave_regularization<T: Real>(ell: &SlowVaryFn<T>, x_max: T, per_decade: usize) -> TabulatedFn<T> {
    let xs = log_grid(T::one(), x_max, per_decade);
    let mut psi = Vec::with_capacity(xs.len());
    let mut run = T::infinity();
    for &x in &xs {
        run = run.min(ell.derivative(x));
        psi.push(run);
    }
    let mut ys = Vec::with_capacity(xs.len());
    let mut acc = psi[0];
    ys.push(acc);
    for i in 1..xs.len() {
        acc += T::lit(0.5) * (psi[i - 1] + psi[i]) * (xs[i] - xs[i - 1]);
        ys.push(acc);
    }
    TabulatedFn { xs, ys }
}

/// `φ̃(x) = ∫₁ˣ φ'(t)/t dt` for `x > 1`, 0 otherwise.
pub fn derivative_transform<T: Real>(phi_prime: impl Fn(T) -> T, x: T) -> Result<T, SlowVaryError> {
    if x <= T::one() {
        return Ok(T::zero());
    }
    Ok(integrate_log(|t| phi_prime(t) / t, T::one(), x, &QuadConfig::default())?)
}
