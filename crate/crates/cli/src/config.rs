//! Experiment configuration: JSON or flat `key = value` text.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

/// Experiment selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    GammaVariation,
    XVariation,
    EstimateK,
    VerifyLemmas,
    LocalTimeMoments,
    SelfSimilarity,
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::GammaVariation => "gamma-variation",
            Experiment::XVariation => "x-variation",
            Experiment::EstimateK => "estimate-k",
            Experiment::VerifyLemmas => "verify-lemmas",
            Experiment::LocalTimeMoments => "local-time-moments",
            Experiment::SelfSimilarity => "self-similarity",
        }
    }
}

/// Run configuration. Absent optional fields take experiment-specific defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    /// Path resolution (time steps on `[0, t_end]`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_steps: Option<usize>,
    /// Replicate count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_rep: Option<usize>,
    /// Dyadic partition sizes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_sequence: Option<Vec<usize>>,
    /// Horizon `T`.
    #[serde(default = "defaults::t_end")]
    pub t_end: f64,
    /// Mollifier policy `eps = dt^eps_exponent`.
    #[serde(default = "defaults::eps_exponent")]
    pub eps_exponent: f64,
    /// Second mollifier exponent reported as a sensitivity study.
    #[serde(default = "defaults::eps_sensitivity_exponent")]
    pub eps_sensitivity_exponent: f64,
    /// Local-time bandwidth `eps_L = bandwidth_factor · dt`.
    #[serde(default = "defaults::bandwidth_factor")]
    pub bandwidth_factor: f64,
    /// Truncation of the quadratic-form integrals.
    #[serde(default = "defaults::x_max")]
    pub x_max: f64,
    /// Replicates of the quadratic-form estimator.
    #[serde(default = "defaults::k_rep")]
    pub k_rep: usize,
    /// Fixed `K` reference; the quadratic-form estimate is computed when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_reference: Option<f64>,
    /// Time steps for the local-time readings of `K`.
    #[serde(default = "defaults::rw_n_steps")]
    pub rw_n_steps: usize,
    /// Gauss–Hermite size.
    #[serde(default = "defaults::theta_nodes")]
    pub theta_nodes: usize,
    /// Monte Carlo sample count for lemma checks.
    #[serde(default = "defaults::n_mc")]
    pub n_mc: usize,
    /// Path resolutions for the route-agreement study.
    #[serde(default = "defaults::route_n_sequence")]
    pub route_n_sequence: Vec<usize>,
    /// Paths for the self-intersection identity check.
    #[serde(default = "defaults::identity_rep")]
    pub identity_rep: usize,
    /// Reduced lemma workload.
    #[serde(default)]
    pub quick: bool,
    /// Root seed.
    #[serde(default)]
    pub seed: u64,
    /// Worker threads (0: all available).
    #[serde(default)]
    pub threads: usize,
    /// Output directory.
    #[serde(default = "defaults::out_dir")]
    pub out_dir: String,
}

mod defaults {
    pub fn t_end() -> f64 {
        1.0
    }
    pub fn eps_exponent() -> f64 {
        0.75
    }
    pub fn eps_sensitivity_exponent() -> f64 {
        0.9
    }
    pub fn bandwidth_factor() -> f64 {
        0.25
    }
    pub fn x_max() -> f64 {
        20.0
    }
    pub fn k_rep() -> usize {
        2000
    }
    pub fn rw_n_steps() -> usize {
        2048
    }
    pub fn theta_nodes() -> usize {
        21
    }
    pub fn n_mc() -> usize {
        1_000_000
    }
    pub fn route_n_sequence() -> Vec<usize> {
        vec![256, 1024, 4096]
    }
    pub fn identity_rep() -> usize {
        200
    }
    pub fn out_dir() -> String {
        "results".to_string()
    }
}

/// Configuration error with the offending line when known.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{}{message}", line.map(|l| format!("line {l}: ")).unwrap_or_default())]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

fn err(line: Option<usize>, message: impl Into<String>) -> ConfigError {
    ConfigError { line, message: message.into() }
}

impl ExperimentConfig {
    /// Minimal config for an experiment.
    pub fn new(experiment: Experiment) -> Self {
        let v = serde_json::json!({ "experiment": experiment.name() });
        serde_json::from_value(v).expect("defaults deserialize")
    }

    /// Parses JSON (if the text starts with `{`) or flat `key = value` lines.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let trimmed = text.trim_start();
        let (cfg, lines) = if trimmed.starts_with('{') {
            let cfg: Self = serde_json::from_str(text).map_err(|e| err(Some(e.line()), e.to_string()))?;
            let mut lines = BTreeMap::new();
            for (i, l) in text.lines().enumerate() {
                if let Some(k) = l.trim().strip_prefix('"').and_then(|r| r.split('"').next()) {
                    lines.entry(k.to_string()).or_insert(i + 1);
                }
            }
            (cfg, lines)
        } else {
            Self::parse_flat(text)?
        };
        cfg.validate().map_err(|(key, msg)| err(lines.get(key).copied(), msg))?;
        Ok(cfg)
    }

    fn parse_flat(text: &str) -> Result<(Self, BTreeMap<String, usize>), ConfigError> {
        let mut map = Map::new();
        let mut lines = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let ln = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .or_else(|| line.split_once(':'))
                .ok_or_else(|| err(Some(ln), format!("expected `key = value`, got `{line}`")))?;
            let (k, v) = (k.trim().replace('-', "_"), v.trim());
            if map.contains_key(&k) {
                return Err(err(Some(ln), format!("duplicate key `{k}`")));
            }
            let value = flat_value(v);
            let mut probe = Map::new();
            probe.insert("experiment".into(), Value::String("verify-lemmas".into()));
            probe.insert(k.clone(), value.clone());
            serde_json::from_value::<Self>(Value::Object(probe))
                .map_err(|e| err(Some(ln), format!("`{k}`: {e}")))?;
            map.insert(k.clone(), value);
            lines.insert(k, ln);
        }
        if !map.contains_key("experiment") {
            return Err(err(None, "missing `experiment`"));
        }
        let cfg = serde_json::from_value(Value::Object(map)).map_err(|e| err(None, e.to_string()))?;
        Ok((cfg, lines))
    }

    /// JSON form; parses back to an equal config.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Flat `key = value` form; parses back to an equal config.
    pub fn to_flat(&self) -> String {
        let v = serde_json::to_value(self).expect("config serializes");
        let mut out = String::new();
        if let Value::Object(m) = v {
            for (k, v) in m {
                let s = match v {
                    Value::String(s) => s,
                    Value::Array(a) => a.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","),
                    other => other.to_string(),
                };
                out.push_str(&format!("{k} = {s}\n"));
            }
        }
        out
    }

    fn validate(&self) -> Result<(), (&'static str, String)> {
        let pos = |k: &'static str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err((k, format!("`{k}` must be positive, got {v}")))
            }
        };
        if let Some(n) = self.n_steps {
            pos("n_steps", n as f64)?;
        }
        if let Some(n) = self.n_rep {
            pos("n_rep", n as f64)?;
        }
        if let Some(seq) = &self.n_sequence {
            check_dyadic("n_sequence", seq)?;
        }
        check_dyadic("route_n_sequence", &self.route_n_sequence)?;
        pos("t_end", self.t_end)?;
        pos("eps_exponent", self.eps_exponent)?;
        pos("eps_sensitivity_exponent", self.eps_sensitivity_exponent)?;
        pos("bandwidth_factor", self.bandwidth_factor)?;
        if !(self.x_max >= 1.0) {
            return Err(("x_max", format!("`x_max` must be at least 1, got {}", self.x_max)));
        }
        pos("k_rep", self.k_rep as f64)?;
        if let Some(k) = self.k_reference {
            pos("k_reference", k)?;
        }
        pos("rw_n_steps", self.rw_n_steps as f64)?;
        pos("theta_nodes", self.theta_nodes as f64)?;
        pos("n_mc", self.n_mc as f64)?;
        pos("identity_rep", self.identity_rep as f64)?;
        let seq = self.n_sequence();
        let n = self.n_steps();
        if matches!(self.experiment, Experiment::GammaVariation | Experiment::XVariation) {
            if let Some(&m) = seq.last() {
                if n % m != 0 {
                    return Err(("n_steps", format!("`n_steps` {n} is not a multiple of the largest partition {m}")));
                }
            }
        }
        Ok(())
    }

    /// Effective path resolution.
    pub fn n_steps(&self) -> usize {
        self.n_steps.unwrap_or_else(|| match self.experiment {
            Experiment::GammaVariation | Experiment::XVariation => {
                self.n_sequence().last().copied().unwrap_or(4096)
            }
            Experiment::EstimateK => self.rw_n_steps,
            _ => 4096,
        })
    }

    /// Effective replicate count.
    pub fn n_rep(&self) -> usize {
        self.n_rep.unwrap_or(match self.experiment {
            Experiment::GammaVariation => 200,
            Experiment::XVariation => 1000,
            Experiment::EstimateK => 2000,
            Experiment::VerifyLemmas => 1,
            Experiment::LocalTimeMoments => 10_000,
            Experiment::SelfSimilarity => 10_000,
        })
    }

    /// Effective partition sequence.
    pub fn n_sequence(&self) -> Vec<usize> {
        self.n_sequence.clone().unwrap_or_else(|| vec![512, 1024, 2048, 4096])
    }
}

fn check_dyadic(key: &'static str, seq: &[usize]) -> Result<(), (&'static str, String)> {
    if seq.is_empty() {
        return Err((key, format!("`{key}` must not be empty")));
    }
    if seq.iter().any(|n| !n.is_power_of_two()) {
        return Err((key, format!("`{key}` entries must be powers of two")));
    }
    if seq.windows(2).any(|w| w[1] <= w[0]) {
        return Err((key, format!("`{key}` must be strictly increasing")));
    }
    Ok(())
}

fn flat_value(v: &str) -> Value {
    if let Ok(j) = serde_json::from_str::<Value>(v) {
        return j;
    }
    if v.contains(',') {
        let parts: Vec<Value> = v
            .split(',')
            .map(|p| serde_json::from_str(p.trim()).unwrap_or_else(|_| Value::String(p.trim().to_string())))
            .collect();
        return Value::Array(parts);
    }
    Value::String(v.to_string())
}
