//! Scenario files (TOML, or JSON with the same schema), their validation and
//! content hash.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::engine::SimConfig;
use crate::environment::EnvironmentLaw;
use crate::estimate::{MomentConfig, TailConfig};
use crate::offspring::SampleMode;
use crate::slowvary::{SlowVaryFn, WeightFn};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid value for `{field}`: {message}")]
    Invalid { field: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Criteria,
    Simulate,
    Moments,
    Tail,
    Fncheck,
    Verify,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

/// Simulation settings; the seed lives at the scenario top level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub n_max: usize,
    pub mode: SampleMode,
    pub exact_cap: u64,
    pub clt_threshold: u64,
    pub log_scale_switch: u64,
}

impl Default for SimSection {
    fn default() -> Self {
        let d = SimConfig::default();
        Self {
            n_max: d.n_max,
            mode: d.mode,
            exact_cap: d.exact_cap,
            clt_threshold: d.clt_threshold,
            log_scale_switch: d.log_scale_switch,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BatchSection {
    pub trajectories: usize,
    /// Generations reported by `moments`/`tail`; defaults to `n_max`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub collect_at: Option<Vec<usize>>,
}

impl Default for BatchSection {
    fn default() -> Self {
        Self { trajectories: 1000, collect_at: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightSpec {
    pub alpha: f64,
    #[serde(default = "SlowVaryFn::one")]
    pub ell: SlowVaryFn<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub format: Option<Format>,
}

/// Function-check matrix; empty lists select the built-in menus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct FnCheckSection {
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub ells: Vec<SlowVaryFn<f64>>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub alphas: Vec<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub betas: Vec<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub concave: Vec<SlowVaryFn<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<Experiment>,
    #[serde(default)]
    pub seed: u64,
    pub env: EnvironmentLaw<f64>,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub batch: BatchSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<WeightSpec>,
    #[serde(default)]
    pub moment: MomentConfig,
    #[serde(default)]
    pub tail: TailConfig,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub fncheck: FnCheckSection,
}

fn invalid(field: &str, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid { field: field.into(), message: message.into() }
}

impl Scenario {
    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            n_max: self.sim.n_max,
            seed: self.seed,
            mode: self.sim.mode,
            exact_cap: self.sim.exact_cap,
            clt_threshold: self.sim.clt_threshold,
            log_scale_switch: self.sim.log_scale_switch,
        }
    }

    pub fn collect_at(&self) -> Vec<usize> {
        self.batch.collect_at.clone().unwrap_or_else(|| vec![self.sim.n_max])
    }

    pub fn weight_fn(&self) -> Option<WeightFn<f64>> {
        self.weight.map(|w| WeightFn { alpha: w.alpha, ell: w.ell })
    }

    /// Range checks beyond what the schema enforces.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if i64::try_from(self.seed).is_err() {
            return Err(invalid("seed", format!("must not exceed {} (TOML integer range)", i64::MAX)));
        }
        if self.sim.n_max == 0 {
            return Err(invalid("sim.n_max", "must be at least 1"));
        }
        if self.sim.clt_threshold > self.sim.log_scale_switch {
            return Err(invalid("sim.clt_threshold", "must not exceed sim.log_scale_switch"));
        }
        if self.batch.trajectories == 0 {
            return Err(invalid("batch.trajectories", "must be at least 1"));
        }
        if let Some(c) = &self.batch.collect_at {
            if c.is_empty() {
                return Err(invalid("batch.collect_at", "must not be empty"));
            }
            if let Some(n) = c.iter().find(|&&n| n > self.sim.n_max) {
                return Err(invalid(
                    "batch.collect_at",
                    format!("generation {n} exceeds sim.n_max {}", self.sim.n_max),
                ));
            }
        }
        if let Some(w) = &self.weight {
            if !(w.alpha >= 1.0) || !w.alpha.is_finite() {
                return Err(invalid("weight.alpha", format!("must be >= 1, got {}", w.alpha)));
            }
            w.ell.validate().map_err(|e| invalid("weight.ell", e.to_string()))?;
            WeightFn::new(w.alpha, w.ell).map_err(|e| invalid("weight", e.to_string()))?;
        }
        if self.experiment == Some(Experiment::Moments) && self.weight.is_none() {
            return Err(invalid("weight", "the moments experiment needs a weight"));
        }
        for (i, e) in self.fncheck.ells.iter().chain(&self.fncheck.concave).enumerate() {
            e.validate().map_err(|err| invalid(&format!("fncheck entry {i}"), err.to_string()))?;
        }
        if let Some(b) = self.fncheck.betas.iter().find(|&&b| !(b > 1.0 && b <= 2.0)) {
            return Err(invalid("fncheck.betas", format!("beta must lie in (1, 2], got {b}")));
        }
        if let Some(a) = self.fncheck.alphas.iter().find(|&&a| !(a > 1.0)) {
            return Err(invalid("fncheck.alphas", format!("alpha must exceed 1, got {a}")));
        }
        if !(self.moment.slope_tol > 0.0) || !(self.moment.rel_increment > 0.0) || self.moment.decades < 2 {
            return Err(invalid("moment", "needs decades >= 2 and positive tolerances"));
        }
        if !(self.tail.k_lo > 0.0 && self.tail.k_lo < self.tail.k_hi && self.tail.k_hi < 1.0) || self.tail.window == 0 {
            return Err(invalid("tail", "needs 0 < k_lo < k_hi < 1 and window >= 1"));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario =
            toml::from_str(text).map_err(|e| ScenarioError::Parse { path: "<toml>".into(), message: e.to_string() })?;
        s.validate()?;
        Ok(s)
    }

    pub fn from_json_str(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = serde_json::from_str(text)
            .map_err(|e| ScenarioError::Parse { path: "<json>".into(), message: e.to_string() })?;
        s.validate()?;
        Ok(s)
    }

    /// Reads `path`; `.json` files are parsed as JSON, anything else as TOML.
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let shown = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io { path: shown.clone(), source })?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let parsed = if is_json { Self::from_json_str(&text) } else { Self::from_toml_str(&text) };
        parsed.map_err(|e| match e {
            ScenarioError::Parse { message, .. } => ScenarioError::Parse { path: shown, message },
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes to TOML")
    }

    /// SHA-256 of the canonical JSON encoding, so TOML and JSON spellings of
    /// the same scenario share a hash.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("scenario serializes to JSON");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[[env.states]]
weight = 1.0
law = { family = "dirac", k = 2 }
"#;

    #[test]
    fn minimal_fills_defaults() {
        let s = Scenario::from_toml_str(MINIMAL).unwrap();
        assert_eq!(s.sim, SimSection::default());
        assert_eq!(s.batch.trajectories, 1000);
        assert_eq!(s.seed, 0);
    }

    #[test]
    fn round_trip_is_lossless() {
        let text = r#"
experiment = "moments"
seed = 7
[[env.states]]
weight = 0.5
law = { family = "dirac", k = 4 }
[[env.states]]
weight = 0.5
law = { family = "two_atom", a = 0, b = 1, q = 0.5 }
[sim]
n_max = 12
[weight]
alpha = 1.5
ell = { kind = "log_shift" }
"#;
        let s = Scenario::from_toml_str(text).unwrap();
        let back = Scenario::from_toml_str(&s.to_toml()).unwrap();
        assert_eq!(s, back);
        assert_eq!(s.hash(), back.hash());
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(Scenario::from_json_str(&json).unwrap(), s);
    }

    #[test]
    fn rejects_bad_weights_and_unknown_keys() {
        let bad = MINIMAL.replace("weight = 1.0", "weight = 0.9");
        let err = Scenario::from_toml_str(&bad).unwrap_err().to_string();
        assert!(err.contains("sum"), "{err}");
        let unknown = format!("{MINIMAL}\n[sim]\nn_maxx = 3\n");
        assert!(Scenario::from_toml_str(&unknown).unwrap_err().to_string().contains("n_maxx"));
        let alpha = format!("{MINIMAL}\n[weight]\nalpha = 0.5\n");
        assert!(
            matches!(Scenario::from_toml_str(&alpha), Err(ScenarioError::Invalid { field, .. }) if field == "weight.alpha")
        );
    }

    #[test]
    fn hash_depends_on_content() {
        let a = Scenario::from_toml_str(MINIMAL).unwrap();
        let mut b = a.clone();
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
