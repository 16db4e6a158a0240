//! Predicted-versus-observed reports for the moment criteria.

use serde::{Deserialize, Serialize};

use super::{weighted_moment, EstimateError, MomentConfig, MomentReport, Verdict};
use crate::engine::{batch, mean_summary, BatchSamples, MeanSummary, SimConfig};
use crate::environment::{CriteriaReport, EnvironmentLaw, InteriorVerdict, DEFAULT_INTERIOR_MARGIN};
use crate::scalar::{Extended, Real};
use crate::slowvary::{concavify, EllHatWeight, SlowVaryFn, WeightFn};
use crate::weight::{BoundedCorrection, PowerWeight};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Prediction {
    Finite,
    Infinite,
    /// No statement applies (boundary exponent, failed hypotheses of a
    /// sufficiency result, or an undecidable `W₁` moment).
    Silent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Basis {
    /// Interior exponent: `E φ(W) < ∞` iff `E φ(W₁) < ∞`.
    InteriorEquivalence,
    /// `ρ(α) > 1`, so `E W^{α-δ} = ∞` for small `δ` and the weighted moment diverges.
    PowerMomentCriterion,
    BoundarySilent,
    /// `E m₀^{-1} < 1` and `E W₁ ℓ̂(W₁) < ∞`.
    SufficientCondition,
    /// `E m₀^{-δ₀} < ∞` replaces `E m₀^{-1} < 1` for slowly varying `ℓ`.
    RelaxedCondition,
    HypothesesFail,
}

/// Simulation budget shared by the verdict reports.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerdictBudget {
    pub trajectories: usize,
    /// `sim.n_max` is the generation whose `Wₙ` proxies `W`.
    pub sim: SimConfig,
    pub moment: MomentConfig,
}

impl VerdictBudget {
    pub fn new(trajectories: usize, generation: usize, seed: u64) -> Self {
        Self { trajectories, sim: SimConfig::new(generation, seed), moment: MomentConfig::default() }
    }

    pub fn generation(&self) -> usize {
        self.sim.n_max
    }

    /// Generations collected by [`VerdictBudget::simulate`].
    pub fn collect_at(&self) -> Vec<usize> {
        let n = self.sim.n_max;
        let mut c = vec![1, (n / 4).max(1), (n / 2).max(1), n];
        c.dedup();
        c
    }

    pub fn simulate<T: Real>(&self, env: &EnvironmentLaw<T>) -> Result<BatchSamples<T>, EstimateError> {
        Ok(batch(env, &self.sim, self.trajectories, &self.collect_at())?)
    }
}

fn observed(v: Verdict) -> Prediction {
    match v {
        Verdict::Converging => Prediction::Finite,
        Verdict::Diverging => Prediction::Infinite,
        Verdict::Inconclusive => Prediction::Silent,
    }
}

fn agreement(predicted: Prediction, v: Verdict) -> Option<bool> {
    (predicted != Prediction::Silent).then(|| observed(v) == predicted)
}

fn moment_at<T: Real, W: crate::weight::Weight<T> + ?Sized>(
    samples: &[T],
    weight: &W,
    cfg: &MomentConfig,
    n: usize,
) -> MomentReport<T> {
    let mut r = weighted_moment(samples, weight, cfg);
    r.generation = Some(n);
    r
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real"))]
pub struct PowerMomentReport<T: Real> {
    pub alpha: T,
    pub ell: String,
    pub rho_alpha: T,
    pub interior: InteriorVerdict,
    pub w1_moment: Extended<T>,
    pub predicted: Prediction,
    pub basis: Basis,
    pub observed: MomentReport<T>,
    /// The same moment at generation `n/2`.
    pub observed_half: MomentReport<T>,
    pub half_consistent: bool,
    /// `None` when the prediction is silent.
    pub agreement: Option<bool>,
}

/// Report for `E W^α ℓ(W)` from samples already simulated to generation `n`
/// (which must include `n/2`).
pub fn power_moment_verdict_on<T: Real>(
    env: &EnvironmentLaw<T>,
    alpha: T,
    ell: &SlowVaryFn<T>,
    samples: &BatchSamples<T>,
    n: usize,
    cfg: &MomentConfig,
) -> Result<PowerMomentReport<T>, EstimateError> {
    if !(alpha > T::one()) {
        return Err(EstimateError::Invalid(format!("alpha must exceed 1, got {alpha}")));
    }
    let weight = WeightFn::new(alpha, *ell)?;
    let interior = env.interior_check(alpha, T::lit(DEFAULT_INTERIOR_MARGIN));
    let w1_moment = env.w1_weighted_moment(&weight, None).map(|m| m.value).unwrap_or(Extended::Undetermined);
    let (predicted, basis) = match (interior, w1_moment) {
        (InteriorVerdict::Interior, Extended::Finite(_)) => (Prediction::Finite, Basis::InteriorEquivalence),
        (InteriorVerdict::Interior, Extended::Infinite) => (Prediction::Infinite, Basis::InteriorEquivalence),
        (InteriorVerdict::Interior, Extended::Undetermined) => (Prediction::Silent, Basis::InteriorEquivalence),
        (InteriorVerdict::Outside, _) => (Prediction::Infinite, Basis::PowerMomentCriterion),
        (InteriorVerdict::Boundary, _) => (Prediction::Silent, Basis::BoundarySilent),
    };
    let obs = moment_at(samples.w_at(n), &weight, cfg, n);
    let half = moment_at(samples.w_at((n / 2).max(1)), &weight, cfg, (n / 2).max(1));
    Ok(PowerMomentReport {
        alpha,
        ell: ell.label(),
        rho_alpha: env.rho(alpha),
        interior,
        w1_moment,
        predicted,
        basis,
        agreement: agreement(predicted, obs.verdict),
        half_consistent: half.verdict == obs.verdict,
        observed: obs,
        observed_half: half,
    })
}

pub fn power_moment_verdict<T: Real>(
    env: &EnvironmentLaw<T>,
    alpha: T,
    ell: &SlowVaryFn<T>,
    budget: &VerdictBudget,
) -> Result<PowerMomentReport<T>, EstimateError> {
    let samples = budget.simulate(env)?;
    power_moment_verdict_on(env, alpha, ell, &samples, budget.generation(), &budget.moment)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real"))]
pub struct EllMomentReport<T: Real> {
    pub ell: String,
    /// `E m₀^{-1} = ρ(2)`.
    pub inverse_mean: T,
    /// `E W₁ ℓ̂(W₁)`.
    pub ell_hat_moment: Extended<T>,
    pub basis: Basis,
    pub predicted: Prediction,
    /// `E W ℓ(W)` from `Wₙ`.
    pub observed_w: MomentReport<T>,
    /// `E W* ℓ(W*)` from the running maximum.
    pub observed_w_star: MomentReport<T>,
    pub agreement: Option<bool>,
    pub note: String,
}

/// Exponent used to witness `E m₀^{-δ₀} < ∞` in the relaxed branch.
const RELAXED_DELTA: f64 = 0.5;

pub fn ell_moment_verdict_on<T: Real>(
    env: &EnvironmentLaw<T>,
    ell: &SlowVaryFn<T>,
    samples: &BatchSamples<T>,
    n: usize,
    cfg: &MomentConfig,
) -> Result<EllMomentReport<T>, EstimateError> {
    concavify(ell)?;
    let inverse_mean = env.rho(T::lit(2.0));
    let ell_hat_moment =
        env.w1_weighted_moment(&EllHatWeight { ell: *ell }, None).map(|m| m.value).unwrap_or(Extended::Undetermined);
    let relaxed_ok = ell.is_slowly_varying() && env.rho(T::one() + T::lit(RELAXED_DELTA)).is_finite();
    let (predicted, basis) = if !ell_hat_moment.is_finite() {
        (Prediction::Silent, Basis::HypothesesFail)
    } else if inverse_mean < T::one() {
        (Prediction::Finite, Basis::SufficientCondition)
    } else if relaxed_ok {
        (Prediction::Finite, Basis::RelaxedCondition)
    } else {
        (Prediction::Silent, Basis::HypothesesFail)
    };
    let weight = WeightFn { alpha: T::one(), ell: *ell };
    let observed_w = moment_at(samples.w_at(n), &weight, cfg, n);
    let observed_w_star = moment_at(samples.w_star_at(n), &weight, cfg, n);
    let agreement = (predicted != Prediction::Silent)
        .then(|| observed(observed_w.verdict) == predicted && observed(observed_w_star.verdict) == predicted);
    Ok(EllMomentReport {
        ell: ell.label(),
        inverse_mean,
        ell_hat_moment,
        basis,
        predicted,
        observed_w,
        observed_w_star,
        agreement,
        note: "sufficient condition only; failed hypotheses imply nothing about the moment".into(),
    })
}

pub fn ell_moment_verdict<T: Real>(
    env: &EnvironmentLaw<T>,
    ell: &SlowVaryFn<T>,
    budget: &VerdictBudget,
) -> Result<EllMomentReport<T>, EstimateError> {
    concavify(ell)?;
    let samples = budget.simulate(env)?;
    ell_moment_verdict_on(env, ell, &samples, budget.generation(), &budget.moment)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real"))]
pub struct MaximumReport<T: Real> {
    pub criteria: CriteriaReport<T>,
    pub predicted: Prediction,
    /// `E W*` from the running maximum.
    pub observed_w_star: MomentReport<T>,
    /// `E W* ℓ(W*)` with the bounded correction `ℓ(x) = 1 - 1/(2x)` above 1.
    pub observed_bounded: MomentReport<T>,
    /// Sample mean of `Wₙ` at each collected generation.
    pub mean_drift: Vec<MeanSummary<T>>,
    /// Every drift entry within 4 standard errors of 1.
    pub drift_flat: bool,
    pub agreement: Option<bool>,
    pub annotations: Vec<String>,
}

pub fn maximum_verdict_on<T: Real>(
    env: &EnvironmentLaw<T>,
    samples: &BatchSamples<T>,
    n: usize,
    cfg: &MomentConfig,
) -> Result<MaximumReport<T>, EstimateError> {
    let criteria = env.kesten_stigum_report()?;
    if !criteria.supercritical {
        return Err(EstimateError::Invalid("environment is not supercritical".into()));
    }
    let predicted = if criteria.w_star_integrable_predicted { Prediction::Finite } else { Prediction::Silent };
    let observed_w_star = moment_at(samples.w_star_at(n), &PowerWeight { alpha: T::one() }, cfg, n);
    let observed_bounded = moment_at(samples.w_star_at(n), &BoundedCorrection, cfg, n);
    let mean_drift: Vec<MeanSummary<T>> =
        samples.collect_at.iter().zip(&samples.w).map(|(&k, xs)| mean_summary(k, xs)).collect();
    let four = T::lit(4.0);
    let drift_flat = mean_drift.iter().all(|m| (m.mean - T::one()).abs() <= four * m.std_error + T::lit(1e-12));
    let mut annotations = criteria.annotations.clone();
    annotations.push("E W = 1 and E W* < inf are reported separately; their equivalence is not asserted".into());
    Ok(MaximumReport {
        agreement: agreement(predicted, observed_w_star.verdict),
        criteria,
        predicted,
        observed_w_star,
        observed_bounded,
        mean_drift,
        drift_flat,
        annotations,
    })
}

pub fn maximum_verdict<T: Real>(
    env: &EnvironmentLaw<T>,
    budget: &VerdictBudget,
) -> Result<MaximumReport<T>, EstimateError> {
    if !env.is_supercritical() {
        return Err(EstimateError::Invalid("environment is not supercritical".into()));
    }
    let samples = budget.simulate(env)?;
    maximum_verdict_on(env, &samples, budget.generation(), &budget.moment)
}
