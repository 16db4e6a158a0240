//! I.i.d. environments as finite mixtures of offspring laws, and the exact
//! moment criteria computable from them: `ρ(a) = E m₀^{1-a}`, the critical
//! exponent, log-moments of `m₀` and weighted moments of `W₁ = Z₁/m₀`.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::offspring::{OffspringError, OffspringLaw};
use crate::scalar::{Extended, Real};
use crate::weight::{Weight, XLogX};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvError {
    #[error("invalid environment: {0}")]
    Invalid(String),
    #[error(transparent)]
    Offspring(#[from] OffspringError),
    #[error("environment is not supercritical (E ln m0 = {mean_log_m})")]
    NotSupercritical { mean_log_m: f64 },
    #[error("moment of W1 is undetermined: {0}")]
    Undetermined(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound(deserialize = "T: Real"))]
pub struct EnvState<T: Real> {
    pub weight: T,
    pub law: OffspringLaw<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound(deserialize = "T: Real"))]
pub struct EnvSpec<T: Real> {
    pub states: Vec<EnvState<T>>,
}

/// Law of one environment draw `ζ₀`: state `i` (an offspring law) with
/// probability `wᵢ`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "EnvSpec<T>", into = "EnvSpec<T>", bound(deserialize = "T: Real"))]
pub struct EnvironmentLaw<T: Real> {
    spec: EnvSpec<T>,
    index: Arc<WeightedIndex<f64>>,
}

impl<T: Real> PartialEq for EnvironmentLaw<T> {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec
    }
}

impl<T: Real> TryFrom<EnvSpec<T>> for EnvironmentLaw<T> {
    type Error = EnvError;
    fn try_from(spec: EnvSpec<T>) -> Result<Self, EnvError> {
        Self::from_spec(spec)
    }
}

impl<T: Real> From<EnvironmentLaw<T>> for EnvSpec<T> {
    fn from(env: EnvironmentLaw<T>) -> Self {
        env.spec
    }
}

/// Right endpoint `α*` of `{a > 1 : ρ(a) < 1}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum CriticalAlpha<T> {
    Finite(T),
    /// Every state has `m ≥ 1`, so `ρ(a) < 1` for all `a > 1`.
    ProvenInfinite,
    /// `ρ(a) < 1` on every probe up to the expansion cap.
    BeyondCap(T),
}

impl<T: Real> CriticalAlpha<T> {
    /// Numeric value with `+∞` for both infinite variants.
    pub fn value(&self) -> T {
        match self {
            CriticalAlpha::Finite(a) => *a,
            _ => T::infinity(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InteriorVerdict {
    Interior,
    Boundary,
    Outside,
}

/// Upper end of the doubling bracket search for `α*`.
pub const CRITICAL_ALPHA_CAP: f64 = 1e6;
pub const DEFAULT_INTERIOR_MARGIN: f64 = 1e-9;

/// How the `W₁` moment was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum W1Method<T> {
    Enumeration,
    MonteCarlo { samples: usize, std_error: T },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real"))]
pub struct W1Moment<T: Real> {
    pub value: Extended<T>,
    pub method: W1Method<T>,
}

/// Monte Carlo fallback budget for `w1_weighted_moment`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McBudget {
    pub samples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real"))]
pub struct CriteriaReport<T: Real> {
    pub mean_log_m: T,
    pub neg_log_sq: T,
    /// `ρ(a)` at the probe exponents, keyed by the exponent's decimal form.
    pub rho_at: BTreeMap<String, T>,
    pub critical_alpha: CriticalAlpha<T>,
    /// `E W₁ ln⁺ W₁`.
    pub w1_xlogx: Extended<T>,
    /// `E m₀^{-1}`, the hypothesis of the α = 1 weighted-moment result.
    pub inverse_mean: T,
    pub supercritical: bool,
    /// Both hypotheses of the `E W* < ∞` result: `E(ln⁻ m₀)² < ∞` and `E W₁ ln⁺ W₁ < ∞`.
    pub w_star_integrable_predicted: bool,
    pub truncation_sensitive: bool,
    pub annotations: Vec<String>,
}

pub const RHO_PROBES: [f64; 4] = [1.5, 2.0, 3.0, 4.0];

impl<T: Real> EnvironmentLaw<T> {
    pub fn from_spec(spec: EnvSpec<T>) -> Result<Self, EnvError> {
        if spec.states.is_empty() {
            return Err(EnvError::Invalid("environment needs at least one state".into()));
        }
        if spec.states.iter().any(|s| !(s.weight >= T::zero()) || !s.weight.is_finite()) {
            return Err(EnvError::Invalid("state weights must be finite and nonnegative".into()));
        }
        let total: T = spec.states.iter().map(|s| s.weight).sum();
        if (total - T::one()).abs() > T::lit(1e-12).max(T::epsilon() * T::lit(16.0)) {
            return Err(EnvError::Invalid(format!("state weights sum to {total}, not 1")));
        }
        let index = WeightedIndex::new(spec.states.iter().map(|s| s.weight.as_f64()))
            .map_err(|e| EnvError::Invalid(format!("state weights: {e}")))?;
        Ok(Self { spec, index: Arc::new(index) })
    }

    pub fn new(states: Vec<(OffspringLaw<T>, T)>) -> Result<Self, EnvError> {
        Self::from_spec(EnvSpec { states: states.into_iter().map(|(law, weight)| EnvState { weight, law }).collect() })
    }

    /// Degenerate environment: a Galton–Watson process.
    pub fn single(law: OffspringLaw<T>) -> Self {
        Self::new(vec![(law, T::one())]).expect("single state is valid")
    }

    pub fn states(&self) -> &[EnvState<T>] {
        &self.spec.states
    }

    pub fn state(&self, i: usize) -> &OffspringLaw<T> {
        &self.spec.states[i].law
    }

    pub fn sample_state<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        if self.spec.states.len() == 1 {
            0
        } else {
            self.index.sample(rng)
        }
    }

    fn positive_states(&self) -> impl Iterator<Item = (T, T)> + '_ {
        self.spec.states.iter().filter(|s| s.weight > T::zero()).map(|s| (s.weight, s.law.mean()))
    }

    /// `ρ(a) = Σ wᵢ mᵢ^{1-a}`; exactly 1 at `a = 1`.
    pub fn rho(&self, a: T) -> T {
        if a == T::one() {
            return T::one();
        }
        let e = T::one() - a;
        self.positive_states().map(|(w, m)| w * m.powf(e)).sum()
    }

    /// `E ln m₀`.
    pub fn mean_log_m(&self) -> T {
        self.positive_states().map(|(w, m)| w * m.ln()).sum()
    }

    /// `E (ln⁻ m₀)²`.
    pub fn neg_log_sq_moment(&self) -> T {
        self.positive_states()
            .map(|(w, m)| {
                let l = m.ln_neg();
                w * l * l
            })
            .sum()
    }

    pub fn is_supercritical(&self) -> bool {
        self.mean_log_m() > T::zero()
    }

    pub fn min_mean(&self) -> T {
        self.positive_states().map(|(_, m)| m).fold(T::infinity(), T::min)
    }

    /// Locates `α*` by doubling bracket search then bisection until the
    /// bracket is narrower than `tol` (relative to `max(1, α)`).
    pub fn critical_alpha(&self, tol: T) -> Result<CriticalAlpha<T>, EnvError> {
        if !self.is_supercritical() {
            return Err(EnvError::NotSupercritical { mean_log_m: self.mean_log_m().as_f64() });
        }
        if self.min_mean() >= T::one() {
            return Ok(CriticalAlpha::ProvenInfinite);
        }
        let cap = T::lit(CRITICAL_ALPHA_CAP);
        let one = T::one();
        let (mut lo, mut hi) = (one, T::lit(2.0));
        while self.rho(hi) < one {
            lo = hi;
            hi = hi + hi;
            if hi > cap {
                if self.rho(cap) < one {
                    return Ok(CriticalAlpha::BeyondCap(cap));
                }
                hi = cap;
                break;
            }
        }
        let tol = tol.max(T::epsilon());
        for _ in 0..400 {
            if hi - lo <= tol * hi.max(one) {
                break;
            }
            let mid = T::lit(0.5) * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.rho(mid) < one {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(CriticalAlpha::Finite(T::lit(0.5) * (lo + hi)))
    }

    /// Classifies `α` against the open interval `(1, α*)`; `Boundary` means
    /// the check refuses to decide.
    pub fn interior_check(&self, alpha: T, margin: T) -> InteriorVerdict {
        assert!(alpha > T::one(), "interior_check requires alpha > 1");
        if self.rho(alpha) > T::one() {
            return InteriorVerdict::Outside;
        }
        match self.critical_alpha(T::lit(1e-13)) {
            Ok(c) if alpha + margin < c.value() && self.rho(alpha) < T::one() => InteriorVerdict::Interior,
            _ => InteriorVerdict::Boundary,
        }
    }

    /// `E φ(W₁)` with `W₁ = X/m` for `X` drawn from a random state.
    ///
    /// Exact enumeration whenever every state's support is finite or its
    /// series converges; otherwise Monte Carlo under `budget`.
    pub fn w1_weighted_moment<W: Weight<T> + ?Sized>(
        &self,
        weight: &W,
        budget: Option<McBudget>,
    ) -> Result<W1Moment<T>, EnvError> {
        let parts: Vec<(T, Extended<T>)> = self
            .spec
            .states
            .iter()
            .filter(|s| s.weight > T::zero())
            .map(|s| {
                let m = s.law.mean();
                (s.weight, s.law.expect(|k| weight.phi(T::from_u64_lossy(k) / m)))
            })
            .collect();
        let value = Extended::weighted_sum(parts);
        if value != Extended::Undetermined {
            return Ok(W1Moment { value, method: W1Method::Enumeration });
        }
        let Some(budget) = budget else {
            return Err(EnvError::Undetermined(format!("E {}(W1) series did not converge", weight.label())));
        };
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(budget.seed);
        let n = budget.samples.max(2);
        let (mut sum, mut sum_sq) = (T::zero(), T::zero());
        for _ in 0..n {
            let law = self.state(self.sample_state(&mut rng));
            let v = weight.phi(T::from_u64_lossy(law.sample_one(&mut rng)) / law.mean());
            sum += v;
            sum_sq += v * v;
        }
        let nf = T::from_usize_lossy(n);
        let mean = sum / nf;
        let var = ((sum_sq - nf * mean * mean) / (nf - T::one())).max(T::zero());
        Ok(W1Moment {
            value: Extended::Finite(mean),
            method: W1Method::MonteCarlo { samples: n, std_error: (var / nf).sqrt() },
        })
    }

    pub fn truncation_sensitive(&self) -> bool {
        self.spec.states.iter().any(|s| s.weight > T::zero() && s.law.is_truncation_sensitive())
    }

    /// Exact criteria bundle, including both hypotheses of the `E W* < ∞`
    /// result. `E W* < ∞` and `E W = 1` are reported separately elsewhere;
    /// no equivalence between them is asserted.
    pub fn kesten_stigum_report(&self) -> Result<CriteriaReport<T>, EnvError> {
        let supercritical = self.is_supercritical();
        let critical_alpha =
            if supercritical { self.critical_alpha(T::lit(1e-13))? } else { CriticalAlpha::Finite(T::one()) };
        let mut rho_at = BTreeMap::new();
        for a in RHO_PROBES {
            rho_at.insert(format!("{a}"), self.rho(T::lit(a)));
        }
        let w1 = self.w1_weighted_moment(&XLogX, None)?;
        let neg_log_sq = self.neg_log_sq_moment();
        let truncation_sensitive = self.truncation_sensitive();
        let mut annotations = Vec::new();
        if truncation_sensitive {
            annotations.push(
                "truncation-sensitive: a ZetaLog state has E X ln X growing without bound in its cutoff; \
                 the degenerate-limit regime is not reproducible at finite cutoff"
                    .to_string(),
            );
        }
        if let CriticalAlpha::BeyondCap(cap) = critical_alpha {
            annotations.push(format!("critical alpha exceeds the bracket cap {cap}; reported as +inf"));
        }
        if !supercritical {
            annotations.push("environment is not supercritical".into());
        }
        Ok(CriteriaReport {
            mean_log_m: self.mean_log_m(),
            neg_log_sq,
            rho_at,
            critical_alpha,
            w1_xlogx: w1.value,
            inverse_mean: self.rho(T::lit(2.0)),
            supercritical,
            w_star_integrable_predicted: supercritical && neg_log_sq.is_finite() && w1.value.is_finite(),
            truncation_sensitive,
            annotations,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weight::PowerWeight;
    use approx::assert_relative_eq;

    fn golden() -> EnvironmentLaw<f64> {
        EnvironmentLaw::new(vec![
            (OffspringLaw::dirac(4).unwrap(), 0.5),
            (OffspringLaw::two_atom(0, 1, 0.5).unwrap(), 0.5),
        ])
        .unwrap()
    }

    fn dirac2() -> EnvironmentLaw<f64> {
        EnvironmentLaw::single(OffspringLaw::dirac(2).unwrap())
    }

    #[test]
    fn rho_examples() {
        assert_eq!(dirac2().rho(3.0), 0.25);
        assert_eq!(golden().rho(1.0), 1.0);
        assert_relative_eq!(golden().rho(2.0), 1.125, max_relative = 1e-15);
    }

    #[test]
    fn critical_alpha_examples() {
        assert_eq!(dirac2().critical_alpha(1e-12).unwrap(), CriticalAlpha::ProvenInfinite);
        let a = golden().critical_alpha(1e-13).unwrap().value();
        // ½(2^{a-1} + 4^{1-a}) = 1 with y = 2^{a-1} gives y³ - 2y² + 1 = 0, root y = golden ratio
        let oracle = 1.0 + ((1.0 + 5f64.sqrt()) / 2.0).log2();
        assert!((a - oracle).abs() < 1e-10, "{a} vs {oracle}");
        assert!((golden().rho(a) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn critical_alpha_refuses_subcritical() {
        let env = EnvironmentLaw::single(OffspringLaw::two_atom(0, 1, 0.5).unwrap());
        assert!(matches!(env.critical_alpha(1e-9), Err(EnvError::NotSupercritical { .. })));
    }

    #[test]
    fn critical_alpha_beyond_cap() {
        // m slightly below 1 with tiny weight: ρ stays below 1 far past the cap
        let env = EnvironmentLaw::new(vec![
            (OffspringLaw::dirac(2).unwrap(), 1.0 - 1e-300),
            (OffspringLaw::two_atom(0, 1, 1e-9).unwrap(), 1e-300),
        ])
        .unwrap();
        assert!(matches!(env.critical_alpha(1e-9).unwrap(), CriticalAlpha::BeyondCap(_)));
    }

    #[test]
    fn interior_examples() {
        assert_eq!(dirac2().interior_check(3.0, 1e-9), InteriorVerdict::Interior);
        assert_eq!(golden().interior_check(1.5, 1e-9), InteriorVerdict::Interior);
        assert_eq!(golden().interior_check(2.0, 1e-9), InteriorVerdict::Outside);
        let a = golden().critical_alpha(1e-13).unwrap().value();
        assert_eq!(golden().interior_check(a, 1e-9), InteriorVerdict::Boundary);
    }

    #[test]
    fn log_moment_examples() {
        assert_relative_eq!(golden().mean_log_m(), 0.5 * 2f64.ln(), max_relative = 1e-15);
        assert_relative_eq!(golden().neg_log_sq_moment(), 0.5 * 2f64.ln().powi(2), max_relative = 1e-15);
        assert_eq!(dirac2().neg_log_sq_moment(), 0.0);
    }

    #[test]
    fn w1_moment_examples() {
        let sq = golden().w1_weighted_moment(&PowerWeight { alpha: 2.0 }, None).unwrap();
        assert_relative_eq!(sq.value.finite().unwrap(), 1.5, max_relative = 1e-15);
        let xl = golden().w1_weighted_moment(&XLogX, None).unwrap();
        assert_relative_eq!(xl.value.finite().unwrap(), 0.5 * 2f64.ln(), max_relative = 1e-15);
        let geo = EnvironmentLaw::single(OffspringLaw::geometric(2.0 / 3.0).unwrap());
        for env in [golden(), dirac2(), geo] {
            let one = env.w1_weighted_moment(&PowerWeight { alpha: 1.0 }, None).unwrap();
            assert!((one.value.finite().unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ks_report_examples() {
        let r = golden().kesten_stigum_report().unwrap();
        assert_relative_eq!(r.mean_log_m, 0.34657359027997264, max_relative = 1e-14);
        assert_relative_eq!(r.neg_log_sq, 0.24022650695910071, max_relative = 1e-14);
        assert_relative_eq!(r.w1_xlogx.finite().unwrap(), 0.34657359027997264, max_relative = 1e-14);
        assert!(r.w_star_integrable_predicted && !r.truncation_sensitive);

        let r = dirac2().kesten_stigum_report().unwrap();
        assert_eq!((r.mean_log_m, r.neg_log_sq), (2f64.ln(), 0.0));
        assert_eq!(r.w1_xlogx, Extended::Finite(0.0));
        assert!(r.w_star_integrable_predicted);

        let z = EnvironmentLaw::new(vec![
            (OffspringLaw::zeta_log(10_000_000).unwrap(), 0.5),
            (OffspringLaw::dirac(2).unwrap(), 0.5),
        ])
        .unwrap();
        let r = z.kesten_stigum_report().unwrap();
        assert!(r.w_star_integrable_predicted && r.truncation_sensitive);
        assert!(r.annotations.iter().any(|a| a.contains("truncation-sensitive")));
    }

    #[test]
    fn weights_must_sum_to_one() {
        let err = EnvironmentLaw::new(vec![(OffspringLaw::dirac(2).unwrap(), 0.9)]).unwrap_err();
        assert!(matches!(err, EnvError::Invalid(_)));
    }

    #[test]
    fn serde_shape() {
        let s = serde_json::to_string(&dirac2()).unwrap();
        assert_eq!(s, r#"{"states":[{"weight":1.0,"law":{"family":"dirac","k":2}}]}"#);
        let back: EnvironmentLaw<f64> = serde_json::from_str(&s).unwrap();
        assert_eq!(back, dirac2());
    }
}
