//! Monte Carlo moment estimates with truncation-ladder verdicts, Hill tail
//! index estimates, and prediction-versus-observation reports.

mod verdict;

pub use verdict::{
    ell_moment_verdict, ell_moment_verdict_on, maximum_verdict, maximum_verdict_on, power_moment_verdict,
    power_moment_verdict_on, Basis, EllMomentReport, MaximumReport, PowerMomentReport, Prediction, VerdictBudget,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::ols_slope;
use crate::scalar::Real;
use crate::weight::Weight;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimateError {
    #[error("hill estimator needs {needed} positive samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("top order statistics are all equal; tail index is infinite")]
    Degenerate,
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error(transparent)]
    Env(#[from] crate::environment::EnvError),
    #[error(transparent)]
    Engine(#[from] crate::engine::EngineError),
    #[error(transparent)]
    SlowVary(#[from] crate::slowvary::SlowVaryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Converging,
    Diverging,
    Inconclusive,
}

/// Thresholds of the truncation-ladder verdict.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MomentConfig {
    /// Caps are `10^j · median(φ > 0)` for `j = 1..=decades`.
    pub decades: usize,
    /// Samples above a cap needed for the increment after it to count.
    pub min_exceedances: usize,
    /// Slope (per decade of cap) of the deflated increments beyond which
    /// the verdict is decided.
    pub slope_tol: f64,
    /// Relative top increment under which a flat ladder counts as converged.
    pub rel_increment: f64,
}

impl Default for MomentConfig {
    fn default() -> Self {
        Self { decades: 6, min_exceedances: 30, slope_tol: 0.02, rel_increment: 0.01 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LadderRung<T> {
    pub cap: T,
    /// `E min(φ(W), cap)`.
    pub estimate: T,
    pub exceedances: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real"))]
pub struct MomentReport<T: Real> {
    pub weight: String,
    pub estimate: T,
    pub std_error: T,
    pub sample_size: usize,
    pub ladder: Vec<LadderRung<T>>,
    /// Fitted slope of `log10(Δⱼ / L(φ⁻¹(capⱼ)))` per decade of cap.
    pub slope: Option<T>,
    /// Increments used in the fit.
    pub resolved_increments: usize,
    pub verdict: Verdict,
    pub generation: Option<usize>,
}

fn median<T: Real>(mut xs: Vec<T>) -> T {
    let n = xs.len();
    let cmp = |a: &T, b: &T| a.partial_cmp(b).expect("no NaN");
    let (_, mid, _) = xs.select_nth_unstable_by(n / 2, cmp);
    let mid = *mid;
    if n % 2 == 1 {
        mid
    } else {
        let lower = xs[..n / 2].iter().copied().fold(T::neg_infinity(), T::max);
        T::lit(0.5) * (lower + mid)
    }
}

/// Sample mean and standard error of `φ(Wᵢ)`, with the truncation ladder and
/// its verdict.
///
/// The increments `Δⱼ = E min(φ, capⱼ₊₁) - E min(φ, capⱼ)` behave like
/// `capⱼ^{1 - κ/α}` up to slowly varying factors when `W` has tail index `κ`.
/// Dividing by the slow part `L(φ⁻¹(capⱼ))` and fitting the log-slope per
/// decade separates growth (diverging moment) from decay (converging moment).
pub fn weighted_moment<T: Real, W: Weight<T> + ?Sized>(
    samples: &[T],
    weight: &W,
    cfg: &MomentConfig,
) -> MomentReport<T> {
    assert!(!samples.is_empty(), "weighted_moment needs samples");
    let phis: Vec<T> = samples.iter().map(|&w| weight.phi(w.max(T::zero()))).collect();
    let n = T::from_usize_lossy(phis.len());
    let estimate = phis.iter().copied().sum::<T>() / n;
    let ss: T = phis.iter().map(|&p| (p - estimate) * (p - estimate)).sum();
    let std_error = if phis.len() > 1 { (ss / (n - T::one()) / n).sqrt() } else { T::zero() };
    let positive: Vec<T> = phis.iter().copied().filter(|&p| p > T::zero()).collect();
    let mut report = MomentReport {
        weight: weight.label(),
        estimate,
        std_error,
        sample_size: phis.len(),
        ladder: Vec::new(),
        slope: None,
        resolved_increments: 0,
        verdict: Verdict::Converging,
        generation: None,
    };
    if positive.is_empty() {
        return report;
    }
    let med = median(positive);
    let ten = T::lit(10.0);
    let mut cap = med;
    for _ in 0..cfg.decades {
        cap *= ten;
        let est = phis.iter().map(|&p| p.min(cap)).sum::<T>() / n;
        let exceedances = phis.iter().filter(|&&p| p > cap).count();
        report.ladder.push(LadderRung { cap, estimate: est, exceedances });
    }
    if report.ladder[0].exceedances == 0 {
        return report;
    }
    let mut pts = Vec::new();
    let mut top_rel = None;
    for (j, w) in report.ladder.windows(2).enumerate() {
        let delta = w[1].estimate - w[0].estimate;
        if w[0].exceedances < cfg.min_exceedances || !(delta > T::zero()) {
            continue;
        }
        let level = weight.level_for(w[0].cap);
        let slow = weight.slow_part(level);
        if !(slow > T::zero()) || !slow.is_finite() {
            continue;
        }
        pts.push((T::from_usize_lossy(j), (delta / slow).log10()));
        top_rel = Some(delta / w[1].estimate);
    }
    report.resolved_increments = pts.len();
    let rel_tol = T::lit(cfg.rel_increment);
    let flat_verdict = |rel: Option<T>| match rel {
        Some(r) if r < rel_tol => Verdict::Converging,
        Some(_) => Verdict::Inconclusive,
        None => Verdict::Converging,
    };
    // Exceedances falling more than tenfold per decade until none are left
    // means the tail decays faster than any non-integrable power.
    let tail_exhausted =
        report.ladder.windows(2).take_while(|w| w[0].exceedances > 0).all(|w| w[1].exceedances * 10 < w[0].exceedances);
    report.slope = ols_slope(&pts);
    let tau = T::lit(cfg.slope_tol);
    report.verdict = match report.slope {
        Some(s) if s > tau => Verdict::Diverging,
        Some(s) if s < -tau => Verdict::Converging,
        _ if tail_exhausted && report.ladder.last().is_some_and(|r| r.exceedances == 0) => Verdict::Converging,
        _ => flat_verdict(top_rel),
    };
    report
}

/// Hill estimate `1 / mean(ln(X₍ᵢ₎ / X₍ₖ₊₁₎))` over the top `k` order statistics.
pub fn hill_index<T: Real>(samples: &[T], k: usize) -> Result<T, EstimateError> {
    let mut pos: Vec<T> = samples.iter().copied().filter(|&x| x > T::zero()).collect();
    hill_sorted(sort_desc(&mut pos), k)
}

fn sort_desc<T: Real>(xs: &mut [T]) -> &[T] {
    xs.sort_unstable_by(|a, b| b.partial_cmp(a).expect("no NaN"));
    xs
}

fn hill_sorted<T: Real>(desc: &[T], k: usize) -> Result<T, EstimateError> {
    if k < 2 {
        return Err(EstimateError::Invalid(format!("k must be at least 2, got {k}")));
    }
    if desc.len() < k + 1 {
        return Err(EstimateError::InsufficientSamples { needed: k + 1, got: desc.len() });
    }
    let base = desc[k].ln();
    let mean = desc[..k].iter().map(|x| x.ln() - base).sum::<T>() / T::from_usize_lossy(k);
    if mean > T::zero() {
        Ok(mean.recip())
    } else {
        Err(EstimateError::Degenerate)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TailConfig {
    /// The k grid runs geometrically from `N·k_lo` to `N·k_hi`.
    pub k_lo: f64,
    pub k_hi: f64,
    pub grid_points: usize,
    /// Consecutive k values whose spread is compared.
    pub window: usize,
}

impl Default for TailConfig {
    fn default() -> Self {
        Self { k_lo: 1e-3, k_hi: 0.1, grid_points: 24, window: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real"))]
pub struct TailReport<T: Real> {
    pub survivors: usize,
    pub total: usize,
    /// `(k, hill(k))` over the scan.
    pub ladder: Vec<(usize, T)>,
    /// Hill estimate at `k = N/100`.
    pub default_k_estimate: Option<T>,
    /// Median of the most stable window.
    pub chosen: T,
    pub interval: (T, T),
    pub window_k: (usize, usize),
}

/// Hill estimates over a geometric k grid on the positive samples (survivors)
/// and the median of the window of consecutive k with least relative spread.
pub fn tail_report<T: Real>(samples: &[T], cfg: &TailConfig) -> Result<TailReport<T>, EstimateError> {
    let mut pos: Vec<T> = samples.iter().copied().filter(|&x| x > T::zero()).collect();
    let n = pos.len();
    let desc = sort_desc(&mut pos);
    let lo = ((n as f64 * cfg.k_lo).round() as usize).max(2);
    let hi = ((n as f64 * cfg.k_hi).round() as usize).min(n.saturating_sub(1));
    if hi <= lo || cfg.grid_points < cfg.window || cfg.window == 0 {
        return Err(EstimateError::InsufficientSamples { needed: 2 * lo.max(2) + 1, got: n });
    }
    let mut ks: Vec<usize> = crate::scalar::log_grid_n(lo as f64, hi as f64, cfg.grid_points)
        .into_iter()
        .map(|k| k.round() as usize)
        .collect();
    ks.dedup();
    let ladder: Vec<(usize, T)> = ks.iter().map(|&k| hill_sorted(desc, k).map(|h| (k, h))).collect::<Result<_, _>>()?;
    let w = cfg.window.min(ladder.len());
    let (best, _) = ladder
        .windows(w)
        .enumerate()
        .map(|(i, win)| {
            let vals: Vec<T> = win.iter().map(|p| p.1).collect();
            let lo = vals.iter().copied().fold(T::infinity(), T::min);
            let hi = vals.iter().copied().fold(T::neg_infinity(), T::max);
            (i, (hi - lo) / median(vals))
        })
        .fold((0, T::infinity()), |acc, x| if x.1 < acc.1 { x } else { acc });
    let win = &ladder[best..best + w];
    let vals: Vec<T> = win.iter().map(|p| p.1).collect();
    let interval =
        (vals.iter().copied().fold(T::infinity(), T::min), vals.iter().copied().fold(T::neg_infinity(), T::max));
    Ok(TailReport {
        survivors: n,
        total: samples.len(),
        default_k_estimate: hill_sorted(desc, n / 100).ok(),
        chosen: median(vals),
        interval,
        window_k: (win[0].0, win[w - 1].0),
        ladder,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weight::PowerWeight;

    #[test]
    fn constant_samples() {
        let r = weighted_moment(&vec![1.0f64; 1000], &PowerWeight { alpha: 2.0 }, &MomentConfig::default());
        assert_eq!((r.estimate, r.std_error, r.verdict), (1.0, 0.0, Verdict::Converging));
    }

    #[test]
    fn ladder_is_nondecreasing() {
        let xs: Vec<f64> = (1..5000).map(|i| (i as f64 / 5000.0).powf(-0.8)).collect();
        let r = weighted_moment(&xs, &PowerWeight { alpha: 1.5 }, &MomentConfig::default());
        assert!(r.ladder.windows(2).all(|w| w[0].estimate <= w[1].estimate));
    }

    #[test]
    fn hill_geometric_grid() {
        // X₍ᵢ₎/X₍ₖ₊₁₎ = 2^{k+1-i}: mean log spacing (k+1) ln 2 / 2
        let xs: Vec<f64> = (0..200).map(|i| 3.0 * 2f64.powi(i)).collect();
        for k in [2, 10, 57] {
            let oracle = 2.0 / ((k as f64 + 1.0) * 2f64.ln());
            assert!((hill_index(&xs, k).unwrap() - oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn hill_refusals() {
        assert!(matches!(hill_index(&[2.0f64; 100], 10), Err(EstimateError::Degenerate)));
        assert!(matches!(hill_index(&[1.0f64, 2.0, 0.0, 0.0], 3), Err(EstimateError::InsufficientSamples { .. })));
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(vec![3.0f64, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0f64, 1.0, 2.0, 3.0]), 2.5);
    }
}
