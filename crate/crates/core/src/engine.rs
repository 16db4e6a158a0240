//! Trajectory simulation in quenched and annealed regimes.
//!
//! Populations are carried as exact counts until they exceed
//! `log_scale_switch` (or a sum overflows 64 bits); from then on the state is
//! `(Wₙ, ln Πₙ)` and each generation applies the normal approximation
//! `Z' ≈ N(mZ, σ²Z)`, i.e. `W' = W (1 + σ ξ / (m √Z))`. The count is restored
//! once the population falls back below `clt_threshold`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::environment::EnvironmentLaw;
use crate::offspring::{OffspringError, OffspringLaw, SampleMode, SumConfig};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("invalid simulation config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Offspring(#[from] OffspringError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub n_max: usize,
    pub seed: u64,
    pub mode: SampleMode,
    pub exact_cap: u64,
    pub clt_threshold: u64,
    pub log_scale_switch: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        let sum = SumConfig::default();
        Self {
            n_max: 20,
            seed: 0,
            mode: sum.mode,
            exact_cap: sum.exact_cap,
            clt_threshold: sum.clt_threshold,
            log_scale_switch: 1_000_000_000_000,
        }
    }
}

impl SimConfig {
    pub fn new(n_max: usize, seed: u64) -> Self {
        Self { n_max, seed, ..Default::default() }
    }

    pub fn sum_config(&self) -> SumConfig {
        SumConfig { mode: self.mode, clt_threshold: self.clt_threshold, exact_cap: self.exact_cap }
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        if self.n_max == 0 {
            return Err(EngineError::Invalid("n_max must be at least 1".into()));
        }
        if self.clt_threshold > self.log_scale_switch {
            return Err(EngineError::Invalid(format!(
                "clt_threshold {} exceeds log_scale_switch {}",
                self.clt_threshold, self.log_scale_switch
            )));
        }
        Ok(())
    }
}

/// Population size: an exact count, or `ln Z` once on the log scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PopSize<T> {
    Exact(u64),
    Log(T),
}

impl<T: Real> PopSize<T> {
    pub fn is_zero(&self) -> bool {
        matches!(self, PopSize::Exact(0))
    }

    pub fn ln(&self) -> T {
        match self {
            PopSize::Exact(z) => T::from_u64_lossy(*z).ln(),
            PopSize::Log(l) => *l,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real"))]
pub struct Trajectory<T: Real> {
    pub z: Vec<PopSize<T>>,
    pub log_pi: Vec<T>,
    pub w: Vec<T>,
    /// Running maximum of `w`.
    pub w_star: Vec<T>,
    pub extinct_at: Option<usize>,
    pub env_ids: Vec<usize>,
}

impl<T: Real> Trajectory<T> {
    pub fn n_max(&self) -> usize {
        self.w.len() - 1
    }

    /// `W*_n - W*_{n/2}`, a saturation diagnostic for the running supremum.
    pub fn w_star_increment(&self, n: usize) -> T {
        self.w_star[n] - self.w_star[n / 2]
    }
}

/// Per-trajectory generator: stream `index` of the master seed.
pub fn trajectory_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// `z = 0` returns 0 without consuming randomness.
pub fn step<T: Real>(z: u64, law: &OffspringLaw<T>, rng: &mut ChaCha8Rng, cfg: &SimConfig) -> Result<u64, EngineError> {
    Ok(law.sample_sum(z, rng, &cfg.sum_config())?)
}

#[derive(Debug, Clone, Copy)]
enum State {
    Exact(u64),
    Log,
}

/// Lean single-trajectory state shared by the recording and batch paths.
struct Walker<T> {
    state: State,
    log_pi: T,
    w: T,
    w_star: T,
    extinct_at: Option<usize>,
}

impl<T: Real> Walker<T> {
    fn new() -> Self {
        Self { state: State::Exact(1), log_pi: T::zero(), w: T::one(), w_star: T::one(), extinct_at: None }
    }

    fn pop(&self) -> PopSize<T> {
        match self.state {
            State::Exact(z) => PopSize::Exact(z),
            State::Log => PopSize::Log(self.w.ln() + self.log_pi),
        }
    }

    fn advance(
        &mut self,
        law: &OffspringLaw<T>,
        n_next: usize,
        rng: &mut ChaCha8Rng,
        cfg: &SimConfig,
    ) -> Result<(), EngineError> {
        let m = law.mean();
        let prev_log_pi = self.log_pi;
        self.log_pi += m.ln();
        match self.state {
            State::Exact(0) => return Ok(()),
            State::Exact(z) => match step(z, law, rng, cfg) {
                Ok(0) => {
                    self.state = State::Exact(0);
                    self.w = T::zero();
                    self.extinct_at = Some(n_next);
                }
                Ok(z1) => {
                    self.w = (T::from_u64_lossy(z1).ln() - self.log_pi).exp();
                    self.state = if z1 > cfg.log_scale_switch { State::Log } else { State::Exact(z1) };
                }
                Err(EngineError::Offspring(OffspringError::Saturated)) => {
                    let ln_z = T::from_u64_lossy(z).ln();
                    self.w = (ln_z - prev_log_pi).exp();
                    self.gaussian_step(law, ln_z, rng);
                    self.state = State::Log;
                }
                Err(e) => return Err(e),
            },
            State::Log => {
                let ln_z = self.w.ln() + prev_log_pi;
                self.gaussian_step(law, ln_z, rng);
                if self.w > T::zero() {
                    let ln_z1 = self.w.ln() + self.log_pi;
                    if ln_z1 < T::from_u64_lossy(cfg.clt_threshold.max(1)).ln() {
                        let z1 = ln_z1.exp().round().to_u64().unwrap_or(0);
                        self.state = State::Exact(z1);
                        self.w = if z1 == 0 { T::zero() } else { (T::from_u64_lossy(z1).ln() - self.log_pi).exp() };
                    }
                }
                if self.w <= T::zero() {
                    self.state = State::Exact(0);
                    self.w = T::zero();
                    self.extinct_at = Some(n_next);
                }
            }
        }
        self.w_star = self.w_star.max(self.w);
        Ok(())
    }

    fn gaussian_step(&mut self, law: &OffspringLaw<T>, ln_z: T, rng: &mut ChaCha8Rng) {
        let xi: f64 = StandardNormal.sample(rng);
        let scale = law.variance().sqrt() / (law.mean() * (T::lit(0.5) * ln_z).exp());
        let factor = (T::one() + scale * T::lit(xi)).max(T::zero());
        self.w *= factor;
    }
}

fn check_seq_len<T: Real>(env_seq: &[OffspringLaw<T>], cfg: &SimConfig) -> Result<(), EngineError> {
    cfg.validate()?;
    if env_seq.len() < cfg.n_max {
        return Err(EngineError::Invalid(format!(
            "environment sequence has {} entries, n_max is {}",
            env_seq.len(),
            cfg.n_max
        )));
    }
    Ok(())
}

fn record<T: Real>(
    laws: impl Iterator<Item = (usize, OffspringLaw<T>)>,
    n_max: usize,
    rng: &mut ChaCha8Rng,
    cfg: &SimConfig,
) -> Result<Trajectory<T>, EngineError> {
    let mut walker = Walker::new();
    let mut t = Trajectory {
        z: vec![PopSize::Exact(1)],
        log_pi: vec![T::zero()],
        w: vec![T::one()],
        w_star: vec![T::one()],
        extinct_at: None,
        env_ids: Vec::with_capacity(n_max),
    };
    for (n, (id, law)) in laws.take(n_max).enumerate() {
        walker.advance(&law, n + 1, rng, cfg)?;
        t.z.push(walker.pop());
        t.log_pi.push(walker.log_pi);
        t.w.push(walker.w);
        t.w_star.push(walker.w_star);
        t.env_ids.push(id);
    }
    t.extinct_at = walker.extinct_at;
    Ok(t)
}

/// Quenched run along a fixed environment sequence, driven by `rng`.
pub fn run_quenched_with<T: Real>(
    env_seq: &[OffspringLaw<T>],
    cfg: &SimConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Trajectory<T>, EngineError> {
    check_seq_len(env_seq, cfg)?;
    let mut t = record(env_seq.iter().cloned().enumerate(), cfg.n_max, rng, cfg)?;
    t.env_ids.clear();
    Ok(t)
}

/// Quenched run seeded from `cfg.seed` (stream 0).
pub fn run_quenched<T: Real>(env_seq: &[OffspringLaw<T>], cfg: &SimConfig) -> Result<Trajectory<T>, EngineError> {
    run_quenched_with(env_seq, cfg, &mut trajectory_rng(cfg.seed, 0))
}

fn sample_env_ids<T: Real>(env: &EnvironmentLaw<T>, n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    (0..n).map(|_| env.sample_state(rng)).collect()
}

/// Annealed run number `index`: draws the environment sequence first, then
/// the population, both from stream `index` of `cfg.seed`.
pub fn run_annealed_indexed<T: Real>(
    env: &EnvironmentLaw<T>,
    cfg: &SimConfig,
    index: u64,
) -> Result<Trajectory<T>, EngineError> {
    cfg.validate()?;
    let mut rng = trajectory_rng(cfg.seed, index);
    let ids = sample_env_ids(env, cfg.n_max, &mut rng);
    record(ids.iter().map(|&i| (i, env.state(i).clone())), cfg.n_max, &mut rng, cfg)
}

pub fn run_annealed<T: Real>(env: &EnvironmentLaw<T>, cfg: &SimConfig) -> Result<Trajectory<T>, EngineError> {
    run_annealed_indexed(env, cfg, 0)
}

/// Full annealed trajectories `0..count`, in index order regardless of the
/// number of worker threads.
pub fn simulate_many<T: Real>(
    env: &EnvironmentLaw<T>,
    cfg: &SimConfig,
    count: usize,
) -> Result<Vec<Trajectory<T>>, EngineError> {
    cfg.validate()?;
    let runs: Vec<Result<Trajectory<T>, EngineError>> =
        (0..count as u64).into_par_iter().map(|j| run_annealed_indexed(env, cfg, j)).collect();
    runs.into_iter().collect()
}

/// Samples of `Wₙ` and `W*ₙ` at the collected generations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real"))]
pub struct BatchSamples<T: Real> {
    pub collect_at: Vec<usize>,
    pub count: usize,
    /// `w[i][j]`: `W` at `collect_at[i]` for trajectory `j`.
    pub w: Vec<Vec<T>>,
    pub w_star: Vec<Vec<T>>,
    /// Trajectories still alive at each collected generation.
    pub survivors: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSummary<T> {
    pub n: usize,
    pub mean: T,
    pub std_error: T,
    pub variance: T,
}

pub fn mean_summary<T: Real>(n: usize, xs: &[T]) -> MeanSummary<T> {
    let k = T::from_usize_lossy(xs.len().max(1));
    let mean = xs.iter().copied().sum::<T>() / k;
    let ss: T = xs.iter().map(|&x| (x - mean) * (x - mean)).sum();
    let variance = if xs.len() > 1 { ss / (k - T::one()) } else { T::zero() };
    MeanSummary { n, mean, std_error: (variance / k).sqrt(), variance }
}

impl<T: Real> BatchSamples<T> {
    pub fn index_of(&self, n: usize) -> Option<usize> {
        self.collect_at.iter().position(|&c| c == n)
    }

    pub fn w_at(&self, n: usize) -> &[T] {
        &self.w[self.index_of(n).expect("generation was collected")]
    }

    pub fn w_star_at(&self, n: usize) -> &[T] {
        &self.w_star[self.index_of(n).expect("generation was collected")]
    }

    /// `W` at generation `n` restricted to surviving trajectories.
    pub fn survivors_at(&self, n: usize) -> Vec<T> {
        self.w_at(n).iter().copied().filter(|&w| w > T::zero()).collect()
    }

    pub fn w_summary(&self) -> Vec<MeanSummary<T>> {
        self.collect_at.iter().zip(&self.w).map(|(&n, xs)| mean_summary(n, xs)).collect()
    }
}

/// Runs `count` annealed trajectories (stream `j` for trajectory `j`) in
/// parallel. Results are assembled in index order, so they do not depend on
/// the number of threads.
pub fn batch<T: Real>(
    env: &EnvironmentLaw<T>,
    cfg: &SimConfig,
    count: usize,
    collect_at: &[usize],
) -> Result<BatchSamples<T>, EngineError> {
    cfg.validate()?;
    if count == 0 {
        return Err(EngineError::Invalid("count must be at least 1".into()));
    }
    if let Some(&n) = collect_at.iter().find(|&&n| n > cfg.n_max) {
        return Err(EngineError::Invalid(format!("collect generation {n} exceeds n_max {}", cfg.n_max)));
    }
    let per_traj: Vec<Result<Vec<(T, T)>, EngineError>> = (0..count)
        .into_par_iter()
        .map(|j| {
            let mut rng = trajectory_rng(cfg.seed, j as u64);
            let ids = sample_env_ids(env, cfg.n_max, &mut rng);
            let mut walker = Walker::new();
            let mut out = Vec::with_capacity(collect_at.len());
            let mut trace = Vec::with_capacity(cfg.n_max + 1);
            trace.push((walker.w, walker.w_star));
            for (n, &id) in ids.iter().enumerate() {
                walker.advance(env.state(id), n + 1, &mut rng, cfg)?;
                trace.push((walker.w, walker.w_star));
            }
            out.extend(collect_at.iter().map(|&n| trace[n]));
            Ok(out)
        })
        .collect();
    let mut w = vec![Vec::with_capacity(count); collect_at.len()];
    let mut w_star = vec![Vec::with_capacity(count); collect_at.len()];
    for r in per_traj {
        for (i, (a, b)) in r?.into_iter().enumerate() {
            w[i].push(a);
            w_star[i].push(b);
        }
    }
    let survivors = w.iter().map(|xs| xs.iter().filter(|&&x| x > T::zero()).count()).collect();
    Ok(BatchSamples { collect_at: collect_at.to_vec(), count, w, w_star, survivors })
}

/// Empirical `P(Πₙ⁻¹ > bⁿ)` for `n = 1..=n_max` and its partial sums.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real"))]
pub struct LargeDeviation<T: Real> {
    pub b: T,
    pub count: usize,
    pub per_n: Vec<T>,
    pub partial_sums: Vec<T>,
}

impl<T: Real> LargeDeviation<T> {
    /// Least-squares slope of `ln p(n)` against `n` over the positive entries
    /// with `n ≥ n_from`.
    pub fn log_slope(&self, n_from: usize) -> Option<T> {
        let pts: Vec<(T, T)> = self
            .per_n
            .iter()
            .enumerate()
            .map(|(i, &p)| (i + 1, p))
            .filter(|&(n, p)| n >= n_from && p > T::zero())
            .map(|(n, p)| (T::from_usize_lossy(n), p.ln()))
            .collect();
        ols_slope(&pts)
    }
}

pub(crate) fn ols_slope<T: Real>(pts: &[(T, T)]) -> Option<T> {
    if pts.len() < 2 {
        return None;
    }
    let k = T::from_usize_lossy(pts.len());
    let mx = pts.iter().map(|p| p.0).sum::<T>() / k;
    let my = pts.iter().map(|p| p.1).sum::<T>() / k;
    let sxy: T = pts.iter().map(|&(x, y)| (x - mx) * (y - my)).sum();
    let sxx: T = pts.iter().map(|&(x, _)| (x - mx) * (x - mx)).sum();
    (sxx > T::zero()).then(|| sxy / sxx)
}

/// Simulates environment sequences only and counts `Σᵢ ln mᵢ < n ln(1/b)`.
pub fn log_pi_large_dev<T: Real>(
    env: &EnvironmentLaw<T>,
    seed: u64,
    b: T,
    n_max: usize,
    count: usize,
) -> Result<LargeDeviation<T>, EngineError> {
    let lower = (-env.mean_log_m()).exp();
    if !(b > lower && b < T::one()) {
        return Err(EngineError::Invalid(format!("b = {b} must lie in (exp(-E ln m0), 1) = ({lower}, 1)")));
    }
    if n_max == 0 || count == 0 {
        return Err(EngineError::Invalid("n_max and count must be positive".into()));
    }
    let ln_means: Vec<f64> = env.states().iter().map(|s| s.law.mean().as_f64().ln()).collect();
    let rate = -b.as_f64().ln();
    const CHUNK: usize = 4096;
    let chunks = count.div_ceil(CHUNK);
    let hits = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = trajectory_rng(seed, c as u64);
            let mut hits = vec![0u64; n_max];
            for _ in (c * CHUNK)..((c + 1) * CHUNK).min(count) {
                let mut s = 0.0;
                for (n, h) in hits.iter_mut().enumerate() {
                    s += ln_means[env.sample_state(&mut rng)];
                    if s < (n + 1) as f64 * rate {
                        *h += 1;
                    }
                }
            }
            hits
        })
        .reduce(|| vec![0u64; n_max], |a, b| a.iter().zip(&b).map(|(x, y)| x + y).collect());
    let total = T::from_usize_lossy(count);
    let per_n: Vec<T> = hits.iter().map(|&h| T::from_u64_lossy(h) / total).collect();
    let partial_sums = per_n
        .iter()
        .scan(T::zero(), |acc, &p| {
            *acc += p;
            Some(*acc)
        })
        .collect();
    Ok(LargeDeviation { b, count, per_n, partial_sums })
}

/// Runs `f` on a dedicated rayon pool with `threads` workers.
pub fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> R {
    rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build().expect("thread pool").install(f)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_point() -> EnvironmentLaw<f64> {
        EnvironmentLaw::new(vec![
            (OffspringLaw::dirac(4).unwrap(), 0.5),
            (OffspringLaw::two_atom(0, 1, 0.5).unwrap(), 0.5),
        ])
        .unwrap()
    }

    #[test]
    fn step_examples() {
        let cfg = SimConfig::new(1, 0);
        let mut rng = trajectory_rng(1, 0);
        let before = rng.clone();
        assert_eq!(step(0, &OffspringLaw::<f64>::geometric(0.5).unwrap(), &mut rng, &cfg).unwrap(), 0);
        assert_eq!(rng, before);
        assert_eq!(step(5, &OffspringLaw::<f64>::dirac(2).unwrap(), &mut rng, &cfg).unwrap(), 10);
    }

    #[test]
    fn quenched_examples() {
        let d2 = vec![OffspringLaw::<f64>::dirac(2).unwrap(); 5];
        let t = run_quenched(&d2, &SimConfig::new(5, 3)).unwrap();
        let z: Vec<_> = [1, 2, 4, 8, 16, 32].iter().map(|&z| PopSize::Exact(z)).collect();
        assert_eq!(t.z, z);
        assert!(t.w.iter().all(|&w| (w - 1.0).abs() < 1e-15));
        assert_eq!(*t.w_star.last().unwrap(), 1.0);

        let seq = vec![OffspringLaw::<f64>::dirac(3).unwrap(), OffspringLaw::dirac(2).unwrap()];
        let t = run_quenched(&seq, &SimConfig::new(2, 3)).unwrap();
        assert_eq!(t.z, vec![PopSize::Exact(1), PopSize::Exact(3), PopSize::Exact(6)]);
        assert_eq!(t.log_pi, vec![0.0, 3f64.ln(), 3f64.ln() + 2f64.ln()]);
    }

    #[test]
    fn short_sequence_is_refused() {
        let seq = vec![OffspringLaw::<f64>::dirac(2).unwrap(); 2];
        assert!(run_quenched(&seq, &SimConfig::new(3, 0)).is_err());
    }

    #[test]
    fn annealed_is_deterministic_and_reduces_to_batch() {
        let env = two_point();
        let cfg = SimConfig::new(12, 99);
        let a = run_annealed(&env, &cfg).unwrap();
        assert_eq!(a, run_annealed(&env, &cfg).unwrap());
        let b = batch(&env, &cfg, 1, &[0, 6, 12]).unwrap();
        assert_eq!(b.w[2][0], a.w[12]);
        assert_eq!(b.w_star[1][0], a.w_star[6]);
    }

    #[test]
    fn extinction_is_absorbing() {
        let env = two_point();
        let cfg = SimConfig::new(30, 5);
        for j in 0..200 {
            let t = run_annealed_indexed(&env, &cfg, j).unwrap();
            if let Some(k) = t.extinct_at {
                assert!(t.z[k..].iter().all(|z| z.is_zero()));
                assert!(t.w[k..].iter().all(|&w| w == 0.0));
                assert!(!t.z[k - 1].is_zero());
            }
            for n in 1..=30 {
                assert_eq!(t.w_star[n], t.w_star[n - 1].max(t.w[n]));
            }
        }
    }

    #[test]
    fn log_scale_switch_keeps_w() {
        // Dirac(2) from 1: exact until 2^40 > 1e12, W stays 1 on the log scale
        let seq = vec![OffspringLaw::<f64>::dirac(2).unwrap(); 80];
        let t = run_quenched(&seq, &SimConfig::new(80, 0)).unwrap();
        assert!(matches!(t.z[80], PopSize::Log(_)));
        assert!((t.z[80].ln() - 80.0 * 2f64.ln()).abs() < 1e-9);
        assert!(t.w.iter().all(|&w| (w - 1.0).abs() < 1e-12));
    }

    #[test]
    fn thread_count_does_not_change_batch() {
        let env = two_point();
        let cfg = SimConfig::new(15, 11);
        let one = with_threads(1, || batch(&env, &cfg, 2000, &[5, 15]).unwrap());
        let four = with_threads(4, || batch(&env, &cfg, 2000, &[5, 15]).unwrap());
        assert_eq!(one, four);
    }

    #[test]
    fn large_dev_examples() {
        let d2 = EnvironmentLaw::single(OffspringLaw::<f64>::dirac(2).unwrap());
        let r = log_pi_large_dev(&d2, 1, 0.9, 20, 1000).unwrap();
        assert!(r.per_n.iter().all(|&p| p == 0.0));
        assert!(log_pi_large_dev(&d2, 1, 0.4, 20, 1000).is_err());
        assert!(log_pi_large_dev(&d2, 1, 1.0, 20, 1000).is_err());
    }
}
