//! Property tests over randomly generated laws, environments, samples and
//! slowly varying functions.

use bpre_core::engine::{run_annealed_indexed, simulate_many, with_threads, SimConfig};
use bpre_core::environment::{CriticalAlpha, EnvironmentLaw, InteriorVerdict, DEFAULT_INTERIOR_MARGIN};
use bpre_core::estimate::{hill_index, weighted_moment, MomentConfig};
use bpre_core::offspring::OffspringLaw;
use bpre_core::scalar::{log_grid_n, Extended};
use bpre_core::scenario::Scenario;
use bpre_core::slowvary::{
    concavify, convexify, convexity_certificate, ell_hat, Direction, Epsilon, SlowVaryFn, Transform, WeightFn,
};
use bpre_core::weight::{PowerWeight, Weight};
use proptest::prelude::*;

fn law() -> impl Strategy<Value = OffspringLaw<f64>> {
    prop_oneof![
        (1u64..8).prop_map(|k| OffspringLaw::dirac(k).unwrap()),
        (0u64..4, 1u64..9, 0.05f64..0.95)
            .prop_filter("distinct atoms", |(a, b, _)| a != b)
            .prop_map(|(a, b, q)| OffspringLaw::two_atom(a, b, q).unwrap()),
        (0.1f64..0.85).prop_map(|p| OffspringLaw::geometric(p).unwrap()),
        (0.2f64..6.0).prop_map(|l| OffspringLaw::poisson(l).unwrap()),
        prop::collection::vec(0.0f64..1.0, 2..7)
            .prop_filter("positive mean", |v| v[1..].iter().sum::<f64>() > 0.05)
            .prop_map(|v| {
                let s: f64 = v.iter().sum();
                OffspringLaw::table(v.iter().map(|x| x / s).collect()).unwrap()
            }),
    ]
}

fn env() -> impl Strategy<Value = EnvironmentLaw<f64>> {
    prop::collection::vec((law(), 0.05f64..1.0), 1..4).prop_map(|states| {
        let total: f64 = states.iter().map(|s| s.1).sum();
        let mut states: Vec<(OffspringLaw<f64>, f64)> = states.into_iter().map(|(l, w)| (l, w / total)).collect();
        let rest: f64 = states[1..].iter().map(|s| s.1).sum();
        states[0].1 = 1.0 - rest;
        EnvironmentLaw::new(states).unwrap()
    })
}

fn finite_env() -> impl Strategy<Value = EnvironmentLaw<f64>> {
    env().prop_filter("finite supports", |e| e.states().iter().all(|s| s.law.finite_support().is_some()))
}

fn menu_ell() -> impl Strategy<Value = SlowVaryFn<f64>> {
    prop_oneof![
        (0.1f64..10.0).prop_map(|c| SlowVaryFn::Const { c }),
        (-2.0f64..2.0).prop_map(|gamma| SlowVaryFn::LogPower { gamma }),
        Just(SlowVaryFn::LogShift),
        Just(SlowVaryFn::OnePlusLogPlus),
        (0.0f64..3.0, -0.5f64..0.5, 0.2f64..1.0)
            .prop_map(|(a0, gamma, r)| SlowVaryFn::Karamata { a0, eps: Epsilon::Decay { gamma, r } }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn pmf_sums_to_one(l in law()) {
        let total = match l.finite_support() {
            Some(support) => support.iter().map(|&k| l.pmf(k)).sum::<f64>(),
            None => (0..20_000u64).map(|k| l.pmf(k)).sum::<f64>(),
        };
        prop_assert!((total - 1.0).abs() < 1e-10, "{total}");
    }

    #[test]
    fn first_power_moment_is_mean(l in law()) {
        let m = l.power_moment(1.0).finite().unwrap();
        prop_assert!((m - l.mean()).abs() <= 1e-12 * l.mean().max(1.0));
    }

    #[test]
    fn rho_is_one_at_one_and_convex(e in env(), a in 1.0f64..4.0, gap1 in 0.01f64..1.0, gap2 in 0.01f64..1.0) {
        prop_assert_eq!(e.rho(1.0), 1.0);
        let (b, c) = (a + gap1, a + gap1 + gap2);
        let chord = e.rho(a) + (e.rho(c) - e.rho(a)) * (b - a) / (c - a);
        prop_assert!(e.rho(b) <= chord + 1e-12 * chord.abs().max(1.0));
    }

    #[test]
    fn critical_alpha_solves_rho_equal_one(e in env()) {
        prop_assume!(e.is_supercritical());
        match e.critical_alpha(1e-13).unwrap() {
            CriticalAlpha::Finite(a) => {
                prop_assert!(a > 1.0);
                prop_assert!((e.rho(a) - 1.0).abs() < 1e-9, "rho({a}) = {}", e.rho(a));
            }
            CriticalAlpha::ProvenInfinite => prop_assert!(e.min_mean() >= 1.0),
            CriticalAlpha::BeyondCap(_) => {}
        }
    }

    #[test]
    fn interior_check_is_consistent_with_rho(e in env(), alpha in 1.01f64..5.0) {
        prop_assume!(e.is_supercritical());
        match e.interior_check(alpha, DEFAULT_INTERIOR_MARGIN) {
            InteriorVerdict::Interior => prop_assert!(e.rho(alpha) < 1.0),
            InteriorVerdict::Outside => prop_assert!(e.rho(alpha) > 1.0),
            InteriorVerdict::Boundary => {}
        }
    }

    #[test]
    fn first_moment_of_w1_is_one(e in finite_env()) {
        match e.w1_weighted_moment(&PowerWeight { alpha: 1.0 }, None).unwrap().value {
            Extended::Finite(v) => prop_assert!((v - 1.0).abs() < 1e-12, "{v}"),
            other => prop_assert!(false, "{other:?}"),
        }
    }

    #[test]
    fn trajectories_are_reproducible_and_well_formed(e in env(), seed in any::<u64>(), idx in 0u64..1000) {
        let cfg = SimConfig::new(12, seed);
        let t = run_annealed_indexed(&e, &cfg, idx).unwrap();
        prop_assert_eq!(&t, &run_annealed_indexed(&e, &cfg, idx).unwrap());
        prop_assert_eq!(t.w[0], 1.0);
        prop_assert!(t.w.iter().all(|&w| w >= 0.0));
        if let Some(k) = t.extinct_at {
            prop_assert!(t.z[k..].iter().all(|z| z.is_zero()));
        }
        for n in 0..t.w.len() {
            let max = t.w[..=n].iter().copied().fold(0.0, f64::max);
            prop_assert_eq!(t.w_star[n], max);
        }
    }

    #[test]
    fn ladder_is_monotone_and_nonnegative(xs in prop::collection::vec(0.0f64..1e6, 1..400), alpha in 1.0f64..3.0) {
        let r = weighted_moment(&xs, &PowerWeight { alpha }, &MomentConfig::default());
        prop_assert!(r.estimate >= 0.0);
        prop_assert!(r.ladder.iter().all(|rung| rung.estimate >= 0.0));
        prop_assert!(r.ladder.windows(2).all(|w| w[0].estimate <= w[1].estimate));
    }

    #[test]
    fn hill_estimates_are_positive(xs in prop::collection::vec(1e-3f64..1e6, 20..200), k in 2usize..19) {
        if let Ok(h) = hill_index(&xs, k) {
            prop_assert!(h > 0.0);
        }
    }

    #[test]
    fn certificate_accepts_powers(p in 1.0f64..4.0, lo in 1e-4f64..1.0) {
        let grid = log_grid_n(lo, lo * 1e6, 300);
        let c = convexity_certificate(|x: f64| x.powf(p), Transform::Identity, &grid, Direction::Convex, 1e-9);
        prop_assert!(c.passed, "{:?}", c.witness);
        let root = convexity_certificate(|x: f64| x.powf(p), Transform::Root(2.0 * p), &grid, Direction::Concave, 1e-9);
        prop_assert!(root.passed, "{:?}", root.witness);
    }

    #[test]
    fn weight_vanishes_at_zero_and_is_nondecreasing(ell in menu_ell(), alpha in 1.0f64..3.0) {
        let grid = log_grid_n(1e-3, 1e9, 400);
        match WeightFn::new(alpha, ell) {
            Ok(w) => {
                prop_assert_eq!(w.phi(0.0), 0.0);
                prop_assert!(grid.windows(2).all(|g| w.phi(g[0]) <= w.phi(g[1]) * (1.0 + 1e-12)));
            }
            Err(_) => {
                // refusals are reserved for weights that really decrease somewhere
                let raw = WeightFn { alpha, ell };
                let fine = log_grid_n(1e-3, 1e12, 20_000);
                prop_assert!(fine.windows(2).any(|g| raw.phi(g[1]) < raw.phi(g[0])));
            }
        }
    }

    #[test]
    fn ell_hat_matches_closed_forms(x in 2.0f64..1e8) {
        let lx = x.ln();
        let a = ell_hat(&SlowVaryFn::one(), x).unwrap();
        prop_assert!((a / lx - 1.0).abs() < 1e-8);
        let b = ell_hat(&SlowVaryFn::OnePlusLogPlus, x).unwrap();
        prop_assert!((b / (lx + 0.5 * lx * lx) - 1.0).abs() < 1e-8);
    }

    #[test]
    fn convexified_weight_is_continuous(ell in menu_ell(), alpha in 1.3f64..3.0, frac in 0.1f64..0.9) {
        let beta = 1.0 + frac * (alpha.min(2.0) - 1.0);
        if let Ok(c) = WeightFn::new(alpha, ell).and_then(|w| convexify(&w, beta)) {
            prop_assert!(c.phi1.continuity_gap() <= 1e-10);
        }
    }
}

#[test]
fn concavified_weight_is_continuous() {
    for ell in [
        SlowVaryFn::LogShift,
        SlowVaryFn::OnePlusLogPlus,
        SlowVaryFn::LogPower { gamma: 0.5 },
        SlowVaryFn::ShiftedPower { p: 0.5 },
    ] {
        assert!(concavify(&ell).unwrap().phi1.continuity_gap() <= 1e-10, "{}", ell.label());
    }
}

/// `ℓ(λx)/ℓ(x)` within 1% of 1 at `x = 1e10` holds for constants and for
/// power-decaying `ε`; log-type entries converge only like `1 + γ ln λ / ln x`.
#[test]
fn slow_variation_at_ten_to_the_ten() {
    let x = 1e10;
    let fast: [SlowVaryFn<f64>; 3] = [
        SlowVaryFn::one(),
        SlowVaryFn::Karamata { a0: 1.0, eps: Epsilon::Decay { gamma: 0.5, r: 0.5 } },
        SlowVaryFn::Karamata { a0: 0.0, eps: Epsilon::Decay { gamma: -1.0, r: 0.3 } },
    ];
    for ell in fast {
        for lambda in [0.5, 2.0, 10.0] {
            let r = ell.eval(lambda * x) / ell.eval(x);
            assert!((r - 1.0).abs() < 0.01, "{} at lambda {lambda}: {r}", ell.label());
        }
    }
    type ClosedForm = fn(f64) -> f64;
    let logs: [(SlowVaryFn<f64>, ClosedForm); 3] = [
        (SlowVaryFn::LogShift, |x| (std::f64::consts::E + x).ln()),
        (SlowVaryFn::OnePlusLogPlus, |x| 1.0 + x.ln().max(0.0)),
        (SlowVaryFn::LogPower { gamma: 2.0 }, |x| x.ln().powi(2)),
    ];
    for (ell, closed) in logs {
        for lambda in [0.5, 2.0, 10.0] {
            let r = ell.eval(lambda * x) / ell.eval(x);
            assert!((r - closed(lambda * x) / closed(x)).abs() < 1e-12);
            // the deviation shrinks by decades of x
            let far = ell.eval(lambda * 1e100) / ell.eval(1e100);
            assert!((far - 1.0).abs() < (r - 1.0).abs() / 5.0, "{}", ell.label());
        }
    }
}

#[test]
fn batch_output_is_thread_count_invariant() {
    let e = bpre_core::acceptance::golden_environment();
    let cfg = SimConfig::new(15, 99);
    let one = with_threads(1, || simulate_many(&e, &cfg, 500)).unwrap();
    let four = with_threads(4, || simulate_many(&e, &cfg, 500)).unwrap();
    assert_eq!(one, four);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 32, ..ProptestConfig::default() })]

    #[test]
    fn scenario_round_trip_is_lossless(e in env(), seed in 0..=i64::MAX as u64, n_max in 1usize..40, traj in 1usize..5000, alpha in 1.0f64..4.0, ell in menu_ell()) {
        let mut text = format!("seed = {seed}\n[sim]\nn_max = {n_max}\n[batch]\ntrajectories = {traj}\n");
        text.push_str(&format!("[weight]\nalpha = {alpha:?}\n"));
        text.push_str(&format!("ell = {}\n", toml_inline(&serde_json::to_value(ell).unwrap())));
        text.push_str(&format!("[env]\nstates = {}\n", toml_inline(&serde_json::to_value(&e).unwrap()["states"])));
        let s = Scenario::from_toml_str(&text).unwrap();
        let back = Scenario::from_toml_str(&s.to_toml()).unwrap();
        prop_assert_eq!(&s, &back);
        prop_assert_eq!(s.hash(), back.hash());
        prop_assert_eq!(Scenario::from_json_str(&serde_json::to_string(&s).unwrap()).unwrap(), s);
    }
}

fn toml_inline(v: &serde_json::Value) -> String {
    use serde_json::Value;
    match v {
        Value::Object(m) => format!(
            "{{ {} }}",
            m.iter().map(|(k, v)| format!("{k} = {}", toml_inline(v))).collect::<Vec<_>>().join(", ")
        ),
        Value::Array(a) => format!("[{}]", a.iter().map(toml_inline).collect::<Vec<_>>().join(", ")),
        Value::Number(n) => match n.as_f64() {
            Some(f) if n.is_f64() => format!("{f:?}"),
            _ => n.to_string(),
        },
        other => other.to_string(),
    }
}
