//! Locale-independent CSV and JSON rendering with provenance metadata.

use std::fmt::Write as _;

use serde::Serialize;

use crate::engine::{PopSize, Trajectory};
use crate::scalar::Real;

pub const CSV_COLUMNS: [&str; 7] = ["traj_id", "n", "Z_or_logZ", "logPi", "W", "Wstar", "extinct"];

/// Provenance attached to every artifact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Meta {
    pub scenario_sha256: String,
    pub seed: u64,
    pub experiment: String,
    pub version: String,
}

impl Meta {
    pub fn new(scenario_sha256: impl Into<String>, seed: u64, experiment: impl Into<String>) -> Self {
        Self {
            scenario_sha256: scenario_sha256.into(),
            seed,
            experiment: experiment.into(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

/// Scientific notation with 17 significant digits.
pub fn fmt_float<T: Real>(x: T) -> String {
    let v = x.as_f64();
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

fn fmt_pop<T: Real>(z: &PopSize<T>) -> String {
    match z {
        PopSize::Exact(z) => z.to_string(),
        PopSize::Log(l) => format!("ln:{}", fmt_float(*l)),
    }
}

/// One row per trajectory and generation, preceded by a `#` provenance line.
pub fn trajectories_csv<T: Real>(meta: &Meta, trajectories: &[Trajectory<T>]) -> String {
    let mut out = String::new();
    writeln!(
        out,
        "# scenario_sha256={} seed={} experiment={} version={}",
        meta.scenario_sha256, meta.seed, meta.experiment, meta.version
    )
    .unwrap();
    writeln!(out, "{}", CSV_COLUMNS.join(",")).unwrap();
    for (id, t) in trajectories.iter().enumerate() {
        for n in 0..t.w.len() {
            let extinct = t.extinct_at.is_some_and(|k| n >= k);
            writeln!(
                out,
                "{id},{n},{},{},{},{},{}",
                fmt_pop(&t.z[n]),
                fmt_float(t.log_pi[n]),
                fmt_float(t.w[n]),
                fmt_float(t.w_star[n]),
                u8::from(extinct)
            )
            .unwrap();
        }
    }
    out
}

#[derive(Serialize)]
struct Envelope<'a, R: Serialize> {
    meta: &'a Meta,
    result: &'a R,
}

/// `{"meta": …, "result": …}`, pretty-printed with a trailing newline.
pub fn json_document<R: Serialize>(meta: &Meta, result: &R) -> String {
    let mut s = serde_json::to_string_pretty(&Envelope { meta, result }).expect("result serializes");
    s.push('\n');
    s
}
