//! Chi-square goodness of fit of the offspring samplers against their pmf.

use bpre_core::offspring::{OffspringLaw, SampleMode, SumConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Pearson statistic over cells `0..cells` plus a pooled tail cell; returns
/// the statistic and the 0.999 critical value.
fn chi_square(counts: &[u64], probs: &[f64], n: u64) -> (f64, f64) {
    let stat: f64 = counts
        .iter()
        .zip(probs)
        .map(|(&c, &p)| {
            let e = p * n as f64;
            (c as f64 - e).powi(2) / e
        })
        .sum();
    let critical = ChiSquared::new((counts.len() - 1) as f64).unwrap().inverse_cdf(0.999);
    (stat, critical)
}

fn binned(draws: impl Iterator<Item = u64>, law: &OffspringLaw<f64>, cells: u64) -> (Vec<u64>, Vec<f64>, u64) {
    let mut counts = vec![0u64; cells as usize + 1];
    let mut n = 0;
    for k in draws {
        counts[k.min(cells) as usize] += 1;
        n += 1;
    }
    let mut probs: Vec<f64> = (0..cells).map(|k| law.pmf(k)).collect();
    probs.push(1.0 - probs.iter().sum::<f64>());
    (counts, probs, n)
}

#[test]
fn single_draws_fit_pmf() {
    let laws: Vec<(OffspringLaw<f64>, u64)> = vec![
        (OffspringLaw::poisson(2.5).unwrap(), 9),
        (OffspringLaw::geometric(2.0 / 3.0).unwrap(), 10),
        (OffspringLaw::two_atom(1, 3, 0.3).unwrap(), 4),
        (OffspringLaw::table(vec![0.1, 0.2, 0.3, 0.4]).unwrap(), 4),
        (OffspringLaw::zeta_log(1_000_000).unwrap(), 12),
    ];
    for (i, (law, cells)) in laws.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + i as u64);
        let (counts, probs, n) = binned((0..100_000).map(|_| law.sample_one(&mut rng)), law, *cells);
        let keep: Vec<usize> = (0..probs.len()).filter(|&j| probs[j] * n as f64 >= 5.0).collect();
        let (c, p): (Vec<u64>, Vec<f64>) = keep.iter().map(|&j| (counts[j], probs[j])).unzip();
        let (stat, critical) = chi_square(&c, &p, c.iter().sum());
        assert!(stat < critical, "{:?}: {stat} >= {critical}", law.family());
    }
}

#[test]
fn poisson_sums_fit_poisson_pmf() {
    // a sum of z Poisson(λ) draws is Poisson(zλ)
    let law = OffspringLaw::<f64>::poisson(0.7).unwrap();
    let total = OffspringLaw::<f64>::poisson(0.7 * 5.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let cfg = SumConfig { mode: SampleMode::Exact, ..SumConfig::default() };
    let (counts, probs, n) = binned((0..50_000).map(|_| law.sample_sum(5, &mut rng, &cfg).unwrap()), &total, 10);
    let (stat, critical) = chi_square(&counts, &probs, n);
    assert!(stat < critical, "{stat} >= {critical}");
}
