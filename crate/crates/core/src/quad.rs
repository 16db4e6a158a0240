//! Adaptive Gauss–Kronrod (7/15) quadrature.
//!
//! Global subdivision: the panel with the largest error estimate is bisected
//! until the summed estimate meets `max(abs_tol, rel_tol * |I|)`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuadError {
    #[error("quadrature on [{lo:e}, {hi:e}] did not converge after {panels} panels (error estimate {err:e})")]
    NoConvergence { lo: f64, hi: f64, panels: usize, err: f64 },
    #[error("integrand is not finite at x = {x:e}")]
    NonFinite { x: f64 },
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] =
    [0.129_484_966_168_869_7, 0.279_705_391_489_276_7, 0.381_830_050_505_118_9, 0.417_959_183_673_469_4];

#[derive(Debug, Clone, Copy)]
pub struct QuadConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_panels: usize,
}

impl Default for QuadConfig {
    fn default() -> Self {
        Self { rel_tol: 1e-10, abs_tol: 1e-300, max_panels: 4000 }
    }
}

struct Panel<T> {
    lo: T,
    hi: T,
    value: T,
    err: T,
}

impl<T: Real> PartialEq for Panel<T> {
    fn eq(&self, other: &Self) -> bool {
        self.err == other.err
    }
}
impl<T: Real> Eq for Panel<T> {}
impl<T: Real> PartialOrd for Panel<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<T: Real> Ord for Panel<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.err.partial_cmp(&other.err).unwrap_or(Ordering::Equal)
    }
}

/// One 15-point Kronrod panel: (estimate, error estimate).
pub fn gk15<T: Real, F: Fn(T) -> T>(f: &F, lo: T, hi: T) -> Result<(T, T), QuadError> {
    let half = T::lit(0.5);
    let center = half * (lo + hi);
    let half_len = half * (hi - lo);
    let eval = |x: T| {
        let v = f(x);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(QuadError::NonFinite { x: x.as_f64() })
        }
    };
    let fc = eval(center)?;
    let mut kronrod = fc * T::lit(WGK[7]);
    let mut gauss = fc * T::lit(WG[3]);
    for j in 0..7 {
        let dx = half_len * T::lit(XGK[j]);
        let pair = eval(center - dx)? + eval(center + dx)?;
        kronrod += T::lit(WGK[j]) * pair;
        if j % 2 == 1 {
            gauss += T::lit(WG[j / 2]) * pair;
        }
    }
    let value = kronrod * half_len;
    let err = ((kronrod - gauss) * half_len).abs();
    Ok((value, err))
}

/// Integrates `f` over `[lo, hi]`; `lo > hi` flips the sign.
pub fn integrate<T: Real, F: Fn(T) -> T>(f: F, lo: T, hi: T, cfg: &QuadConfig) -> Result<T, QuadError> {
    if lo == hi {
        return Ok(T::zero());
    }
    if lo > hi {
        return integrate(f, hi, lo, cfg).map(|v| -v);
    }
    let rel = T::lit(cfg.rel_tol).max(T::epsilon() * T::lit(50.0));
    let abs = T::lit(cfg.abs_tol);
    let (value, err) = gk15(&f, lo, hi)?;
    let mut heap = BinaryHeap::new();
    heap.push(Panel { lo, hi, value, err });
    let (mut total, mut total_err) = (value, err);
    let mut panels = 1usize;
    while total_err > abs.max(rel * total.abs()) {
        if panels >= cfg.max_panels {
            return Err(QuadError::NoConvergence { lo: lo.as_f64(), hi: hi.as_f64(), panels, err: total_err.as_f64() });
        }
        let worst = heap.pop().expect("heap never empty");
        let mid = T::lit(0.5) * (worst.lo + worst.hi);
        if mid <= worst.lo || mid >= worst.hi {
            // panel cannot be split further in this precision
            heap.push(worst);
            break;
        }
        let (lv, le) = gk15(&f, worst.lo, mid)?;
        let (rv, re) = gk15(&f, mid, worst.hi)?;
        total += lv + rv - worst.value;
        total_err += le + re - worst.err;
        heap.push(Panel { lo: worst.lo, hi: mid, value: lv, err: le });
        heap.push(Panel { lo: mid, hi: worst.hi, value: rv, err: re });
        panels += 1;
    }
    // resum to shed accumulated cancellation in the running total
    Ok(heap.iter().map(|p| p.value).sum())
}

/// Integrates `f(t)` over `[lo, hi]` with `0 < lo` after the substitution
/// `t = e^u`, which keeps integrands spanning many decades well resolved.
pub fn integrate_log<T: Real, F: Fn(T) -> T>(f: F, lo: T, hi: T, cfg: &QuadConfig) -> Result<T, QuadError> {
    assert!(lo > T::zero() && hi > T::zero(), "log substitution needs a positive range");
    integrate(
        |u: T| {
            let t = u.exp();
            f(t) * t
        },
        lo.ln(),
        hi.ln(),
        cfg,
    )
}
