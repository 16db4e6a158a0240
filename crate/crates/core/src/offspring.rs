//! Offspring distributions on ℕ: pmf, exact moment functionals and samplers
//! for single draws and for sums of `z` i.i.d. draws.

use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Binomial, Distribution, Gamma, Geometric, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{Extended, Real};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OffspringError {
    #[error("invalid offspring law: {0}")]
    Invalid(String),
    #[error("exact summation of {z} draws exceeds the exact-work cap {cap}")]
    ExactCapExceeded { z: u64, cap: u64 },
    #[error("population count overflowed 64 bits")]
    Saturated,
}

/// Parameterisation of an offspring law. `TwoAtom { a, b, q }` puts mass `q`
/// on `a` and `1 - q` on `b`; `Geometric { p }` has pmf `(1 - p) p^k` on
/// `{0, 1, ...}`; `ZetaLog { k_max }` has `p_k ∝ 1 / (k² ln² k)` on `2..=k_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum Family<T> {
    Dirac { k: u64 },
    TwoAtom { a: u64, b: u64, q: T },
    Geometric { p: T },
    Poisson { lambda: T },
    Table { pmf: Vec<T> },
    ZetaLog { k_max: u64 },
}

/// Largest index whose cumulative pmf is tabulated for `ZetaLog` sampling;
/// beyond it draws come from rejection against a `1/(k(k+1))` envelope.
const ZETA_HEAD: u64 = 1 << 16;

#[derive(Debug)]
struct ZetaTables {
    norm: f64,
    head_cdf: Vec<f64>,
}

#[derive(Debug)]
enum SamplerCache {
    None,
    Table(WeightedIndex<f64>),
    Zeta(ZetaTables),
}

/// A validated offspring law with cached mean, variance and sampler tables.
/// Immutable after construction; cheap to clone and share across threads.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "Family<T>", into = "Family<T>", bound(deserialize = "T: Real"))]
pub struct OffspringLaw<T: Real> {
    family: Family<T>,
    mean: T,
    variance: T,
    cache: Arc<SamplerCache>,
}

impl<T: Real> PartialEq for OffspringLaw<T> {
    fn eq(&self, other: &Self) -> bool {
        self.family == other.family
    }
}

impl<T: Real> TryFrom<Family<T>> for OffspringLaw<T> {
    type Error = OffspringError;
    fn try_from(family: Family<T>) -> Result<Self, Self::Error> {
        Self::new(family)
    }
}

impl<T: Real> From<OffspringLaw<T>> for Family<T> {
    fn from(law: OffspringLaw<T>) -> Self {
        law.family
    }
}

/// How `sample_sum` treats large counts without an exact closure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SampleMode {
    Exact,
    #[default]
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SumConfig {
    pub mode: SampleMode,
    /// Above this count `Auto` mode substitutes a rounded normal draw.
    pub clt_threshold: u64,
    /// `Exact` mode refuses to perform more individual draws than this.
    pub exact_cap: u64,
}

impl Default for SumConfig {
    fn default() -> Self {
        Self { mode: SampleMode::Auto, clt_threshold: 1_000_000, exact_cap: 100_000_000 }
    }
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, OffspringError> {
    Err(OffspringError::Invalid(msg.into()))
}

fn zeta_weight(k: u64) -> f64 {
    let kf = k as f64;
    let l = kf.ln();
    1.0 / (kf * kf * l * l)
}

/// Neumaier-compensated accumulator.
#[derive(Default, Clone, Copy)]
struct KahanSum<T> {
    sum: T,
    comp: T,
}

impl<T: Real> KahanSum<T> {
    fn add(&mut self, x: T) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }
    fn value(&self) -> T {
        self.sum + self.comp
    }
}

/// Term cap for adaptive series summation before returning `Undetermined`.
pub const SERIES_TERM_CAP: u64 = 10_000_000;
/// Series stop once the geometric tail majorant drops below this fraction of the partial sum.
pub const SERIES_REL_TAIL: f64 = 1e-14;

/// Sums `Σ_{k ≥ 0} term(k)` for terms that are eventually ratio-decreasing.
///
/// Once consecutive ratios `r_k = t_{k+1}/t_k` are below one and
/// nonincreasing, the tail is majorised by `t_{k+1} r / (1 - r)`.
pub(crate) fn sum_series<T: Real>(term: impl Fn(u64) -> T) -> Extended<T> {
    let rel = T::lit(SERIES_REL_TAIL).max(T::epsilon());
    let mut acc = KahanSum::<T>::default();
    let mut prev_ratio = T::infinity();
    let mut prev = term(0);
    if !prev.is_finite() {
        return Extended::Infinite;
    }
    acc.add(prev);
    for k in 1..SERIES_TERM_CAP {
        let t = term(k);
        if !t.is_finite() {
            return Extended::Infinite;
        }
        acc.add(t);
        if prev > T::zero() && t > T::zero() {
            let r = t / prev;
            if r < T::one() && r <= prev_ratio {
                let bound = t * r / (T::one() - r);
                if bound <= rel * acc.value().abs() {
                    return Extended::Finite(acc.value());
                }
            }
            prev_ratio = r;
        } else if t == T::zero() && prev == T::zero() && k > 64 {
            // two consecutive exact zeros far out: the pmf underflowed
            return Extended::Finite(acc.value());
        }
        prev = t;
    }
    Extended::Undetermined
}

fn ln_factorial(k: u64) -> f64 {
    libm::lgamma(k as f64 + 1.0)
}

impl<T: Real> OffspringLaw<T> {
    pub fn new(family: Family<T>) -> Result<Self, OffspringError> {
        let tol = T::lit(1e-12);
        let (mean, variance, cache) = match &family {
            Family::Dirac { k } => {
                if *k == 0 {
                    return invalid("Dirac(0) has zero mean");
                }
                (T::from_u64_lossy(*k), T::zero(), SamplerCache::None)
            }
            Family::TwoAtom { a, b, q } => {
                if !(*q >= T::zero() && *q <= T::one()) {
                    return invalid("TwoAtom weight q must lie in [0, 1]");
                }
                let (af, bf) = (T::from_u64_lossy(*a), T::from_u64_lossy(*b));
                let mean = *q * af + (T::one() - *q) * bf;
                let var = *q * (T::one() - *q) * (af - bf) * (af - bf);
                (mean, var, SamplerCache::None)
            }
            Family::Geometric { p } => {
                if !(*p > T::zero() && *p < T::one()) {
                    return invalid("Geometric p must lie in (0, 1)");
                }
                let one_m = T::one() - *p;
                (*p / one_m, *p / (one_m * one_m), SamplerCache::None)
            }
            Family::Poisson { lambda } => {
                if !(*lambda > T::zero() && lambda.is_finite()) {
                    return invalid("Poisson lambda must be positive and finite");
                }
                (*lambda, *lambda, SamplerCache::None)
            }
            Family::Table { pmf } => {
                if pmf.is_empty() {
                    return invalid("Table pmf is empty");
                }
                if pmf.iter().any(|p| !(*p >= T::zero()) || !p.is_finite()) {
                    return invalid("Table pmf entries must be finite and nonnegative");
                }
                let total: T = pmf.iter().copied().sum();
                if (total - T::one()).abs() > tol.max(T::epsilon() * T::lit(16.0)) {
                    return invalid(format!("Table pmf sums to {total}, not 1"));
                }
                let mut m = KahanSum::default();
                let mut m2 = KahanSum::default();
                for (k, p) in pmf.iter().enumerate() {
                    let kf = T::from_usize_lossy(k);
                    m.add(kf * *p);
                    m2.add(kf * kf * *p);
                }
                let (m, m2) = (m.value(), m2.value());
                let index = WeightedIndex::new(pmf.iter().map(|p| p.as_f64()))
                    .map_err(|e| OffspringError::Invalid(format!("Table pmf: {e}")))?;
                (m, (m2 - m * m).max(T::zero()), SamplerCache::Table(index))
            }
            Family::ZetaLog { k_max } => {
                if *k_max < 3 {
                    return invalid("ZetaLog requires k_max >= 3");
                }
                // sum smallest terms first
                let norm: f64 = (2..=*k_max).rev().map(zeta_weight).sum();
                let (mut m, mut m2) = (0.0f64, 0.0f64);
                for k in (2..=*k_max).rev() {
                    let p = zeta_weight(k) / norm;
                    m += k as f64 * p;
                    m2 += (k as f64) * (k as f64) * p;
                }
                let head_end = (*k_max).min(ZETA_HEAD);
                let mut head_cdf = Vec::with_capacity(head_end as usize - 1);
                let mut c = 0.0;
                for k in 2..=head_end {
                    c += zeta_weight(k) / norm;
                    head_cdf.push(c);
                }
                if head_end == *k_max {
                    *head_cdf.last_mut().expect("nonempty") = 1.0;
                }
                (T::lit(m), T::lit((m2 - m * m).max(0.0)), SamplerCache::Zeta(ZetaTables { norm, head_cdf }))
            }
        };
        if !(mean > T::zero()) || !mean.is_finite() {
            return invalid(format!("offspring mean must be positive and finite, got {mean}"));
        }
        Ok(Self { family, mean, variance, cache: Arc::new(cache) })
    }

    pub fn dirac(k: u64) -> Result<Self, OffspringError> {
        Self::new(Family::Dirac { k })
    }
    pub fn two_atom(a: u64, b: u64, q: T) -> Result<Self, OffspringError> {
        Self::new(Family::TwoAtom { a, b, q })
    }
    pub fn geometric(p: T) -> Result<Self, OffspringError> {
        Self::new(Family::Geometric { p })
    }
    pub fn poisson(lambda: T) -> Result<Self, OffspringError> {
        Self::new(Family::Poisson { lambda })
    }
    pub fn table(pmf: Vec<T>) -> Result<Self, OffspringError> {
        Self::new(Family::Table { pmf })
    }
    pub fn zeta_log(k_max: u64) -> Result<Self, OffspringError> {
        Self::new(Family::ZetaLog { k_max })
    }

    pub fn family(&self) -> &Family<T> {
        &self.family
    }

    pub fn mean(&self) -> T {
        self.mean
    }

    pub fn variance(&self) -> T {
        self.variance
    }

    /// True for laws whose heavy tail is cut at a finite index, so that
    /// moment functionals depend on the cut (currently `ZetaLog`).
    pub fn is_truncation_sensitive(&self) -> bool {
        matches!(self.family, Family::ZetaLog { .. })
    }

    pub fn pmf(&self, k: u64) -> T {
        match (&self.family, self.cache.as_ref()) {
            (Family::Dirac { k: d }, _) => {
                if k == *d {
                    T::one()
                } else {
                    T::zero()
                }
            }
            (Family::TwoAtom { a, b, q }, _) => {
                let mut p = T::zero();
                if k == *a {
                    p += *q;
                }
                if k == *b {
                    p += T::one() - *q;
                }
                p
            }
            (Family::Geometric { p }, _) => (T::one() - *p) * p.powf(T::from_u64_lossy(k)),
            (Family::Poisson { lambda }, _) => {
                let l = lambda.as_f64();
                let lnp = k as f64 * l.ln() - l - ln_factorial(k);
                T::lit(lnp.exp())
            }
            (Family::Table { pmf }, _) => pmf.get(k as usize).copied().unwrap_or_else(T::zero),
            (Family::ZetaLog { k_max }, SamplerCache::Zeta(z)) => {
                if k >= 2 && k <= *k_max {
                    T::lit(zeta_weight(k) / z.norm)
                } else {
                    T::zero()
                }
            }
            (Family::ZetaLog { .. }, _) => unreachable!("ZetaLog always carries its tables"),
        }
    }

    /// Support points with positive mass when the support is finite.
    pub fn finite_support(&self) -> Option<Vec<u64>> {
        match &self.family {
            Family::Dirac { k } => Some(vec![*k]),
            Family::TwoAtom { a, b, .. } => {
                if a == b {
                    Some(vec![*a])
                } else {
                    Some(vec![*a, *b])
                }
            }
            Family::Table { pmf } => Some((0..pmf.len() as u64).collect()),
            Family::ZetaLog { k_max } => Some((2..=*k_max).collect()),
            Family::Geometric { .. } | Family::Poisson { .. } => None,
        }
    }

    /// `E f(X)`: a finite sum for finite support, otherwise an adaptive series
    /// with a geometric tail majorant (see [`sum_series`]).
    pub fn expect(&self, f: impl Fn(u64) -> T) -> Extended<T> {
        match &self.family {
            Family::Geometric { .. } | Family::Poisson { .. } => sum_series(|k| {
                let p = self.pmf(k);
                if p == T::zero() {
                    T::zero()
                } else {
                    p * f(k)
                }
            }),
            Family::ZetaLog { k_max } => {
                let mut acc = KahanSum::default();
                for k in (2..=*k_max).rev() {
                    let v = self.pmf(k) * f(k);
                    if !v.is_finite() {
                        return Extended::Infinite;
                    }
                    acc.add(v);
                }
                Extended::Finite(acc.value())
            }
            _ => {
                let mut acc = KahanSum::default();
                for k in self.finite_support().expect("finite family") {
                    let p = self.pmf(k);
                    if p > T::zero() {
                        let v = p * f(k);
                        if !v.is_finite() {
                            return Extended::Infinite;
                        }
                        acc.add(v);
                    }
                }
                Extended::Finite(acc.value())
            }
        }
    }

    /// `E X^α` for `α ≥ 1`.
    pub fn power_moment(&self, alpha: T) -> Extended<T> {
        assert!(alpha >= T::one(), "power_moment requires alpha >= 1");
        if alpha == T::one() {
            return Extended::Finite(self.mean);
        }
        match &self.family {
            Family::Dirac { k } => Extended::Finite(T::from_u64_lossy(*k).powf(alpha)),
            Family::Geometric { .. } | Family::Poisson { .. } if alpha == T::lit(2.0) => {
                Extended::Finite(self.variance + self.mean * self.mean)
            }
            _ => self.expect(|k| T::from_u64_lossy(k).powf(alpha)),
        }
    }

    /// `E X ln⁺ X`.
    pub fn xlogx_moment(&self) -> Extended<T> {
        self.expect(|k| {
            let x = T::from_u64_lossy(k);
            x * x.ln_pos()
        })
    }

    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        match (&self.family, self.cache.as_ref()) {
            (Family::Dirac { k }, _) => *k,
            (Family::TwoAtom { a, b, q }, _) => {
                if rng.random::<f64>() < q.as_f64() {
                    *a
                } else {
                    *b
                }
            }
            (Family::Geometric { p }, _) => Geometric::new(1.0 - p.as_f64()).expect("validated geometric").sample(rng),
            (Family::Poisson { lambda }, _) => {
                Poisson::new(lambda.as_f64()).expect("validated poisson").sample(rng) as u64
            }
            (Family::Table { .. }, SamplerCache::Table(index)) => index.sample(rng) as u64,
            (Family::ZetaLog { k_max }, SamplerCache::Zeta(z)) => sample_zeta(*k_max, z, rng),
            _ => unreachable!("sampler cache matches family"),
        }
    }

    /// Draws the sum of `z` i.i.d. copies. Exact closures (Dirac, TwoAtom,
    /// Poisson, Geometric) apply in both modes; other families draw
    /// individually, except that `Auto` substitutes a rounded normal draw with
    /// mean `z m` and variance `z σ²` (clamped at 0) above `clt_threshold`.
    pub fn sample_sum<R: Rng + ?Sized>(&self, z: u64, rng: &mut R, cfg: &SumConfig) -> Result<u64, OffspringError> {
        if z == 0 {
            return Ok(0);
        }
        if z == 1 {
            return Ok(self.sample_one(rng));
        }
        match &self.family {
            Family::Dirac { k } => k.checked_mul(z).ok_or(OffspringError::Saturated),
            Family::TwoAtom { a, b, q } => {
                let n_a = Binomial::new(z, q.as_f64()).expect("validated q").sample(rng);
                a.checked_mul(n_a)
                    .and_then(|x| b.checked_mul(z - n_a).and_then(|y| x.checked_add(y)))
                    .ok_or(OffspringError::Saturated)
            }
            Family::Poisson { lambda } => poisson_count(z as f64 * lambda.as_f64(), rng),
            Family::Geometric { p } => {
                // negative binomial as a gamma-mixed Poisson
                let p = p.as_f64();
                let rate = Gamma::new(z as f64, p / (1.0 - p)).expect("valid gamma").sample(rng);
                poisson_count(rate, rng)
            }
            Family::Table { .. } | Family::ZetaLog { .. } => {
                if cfg.mode == SampleMode::Auto && z > cfg.clt_threshold {
                    let m = self.mean.as_f64();
                    let sd = (z as f64 * self.variance.as_f64()).sqrt();
                    let draw = Normal::new(z as f64 * m, sd).expect("finite normal").sample(rng).round();
                    return if draw >= u64::MAX as f64 {
                        Err(OffspringError::Saturated)
                    } else {
                        Ok(draw.max(0.0) as u64)
                    };
                }
                if cfg.mode == SampleMode::Exact && z > cfg.exact_cap {
                    return Err(OffspringError::ExactCapExceeded { z, cap: cfg.exact_cap });
                }
                let mut total = 0u64;
                for _ in 0..z {
                    total = total.checked_add(self.sample_one(rng)).ok_or(OffspringError::Saturated)?;
                }
                Ok(total)
            }
        }
    }
}

fn poisson_count<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> Result<u64, OffspringError> {
    if lambda <= 0.0 {
        return Ok(0);
    }
    if lambda >= Poisson::<f64>::MAX_LAMBDA {
        return Err(OffspringError::Saturated);
    }
    let x = Poisson::new(lambda).expect("positive lambda").sample(rng);
    if x >= u64::MAX as f64 {
        Err(OffspringError::Saturated)
    } else {
        Ok(x as u64)
    }
}

fn sample_zeta<R: Rng + ?Sized>(k_max: u64, z: &ZetaTables, rng: &mut R) -> u64 {
    let u: f64 = rng.random();
    let head_mass = *z.head_cdf.last().expect("nonempty head");
    if u < head_mass || k_max <= ZETA_HEAD {
        let idx = z.head_cdf.partition_point(|&c| c <= u).min(z.head_cdf.len() - 1);
        return idx as u64 + 2;
    }
    // tail over (ZETA_HEAD, k_max]: envelope 1/(k(k+1)) via inverse of the
    // continuous 1/y² law, acceptance ratio ln²(A)/ln²(k) · (k+1)A/(k(A+1))
    let a = (ZETA_HEAD + 1) as f64;
    let upper = (k_max + 1) as f64;
    let la = a.ln();
    let bound = (a + 1.0) / (a * la * la);
    loop {
        let v: f64 = rng.random();
        let y = 1.0 / (1.0 / a - v * (1.0 / a - 1.0 / upper));
        let k = (y.floor() as u64).clamp(ZETA_HEAD + 1, k_max);
        let kf = k as f64;
        let lk = kf.ln();
        let accept = (kf + 1.0) / (kf * lk * lk) / bound;
        if rng.random::<f64>() < accept {
            return k;
        }
    }
}
