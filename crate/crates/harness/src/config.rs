//! Experiment configuration: defaults, profiles and JSON loading.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use vmgp_core::environments::EnvId;

use crate::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModelKind {
    Vmgp,
    Dkt,
    Alpaca,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Vmgp, ModelKind::Dkt, ModelKind::Alpaca];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Vmgp => "vmgp",
            ModelKind::Dkt => "dkt",
            ModelKind::Alpaca => "alpaca",
        }
    }

    pub fn valid_ids() -> String {
        Self::ALL.map(ModelKind::as_str).join(", ")
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, HarnessError> {
        if s == "emaml" {
            return Err(HarnessError::Usage(format!(
                "baseline `emaml` is not supported (supported models: {})",
                Self::valid_ids()
            )));
        }
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                HarnessError::Usage(format!(
                    "unknown model `{s}` (supported models: {})",
                    Self::valid_ids()
                ))
            })
    }
}

/// Iteration and test-set budget presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    /// 2 000 iterations, 500 test tasks.
    Desk,
    /// 10 000 iterations, 1 000 test tasks.
    Full,
}

impl FromStr for Profile {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, HarnessError> {
        match s {
            "desk" => Ok(Profile::Desk),
            "full" => Ok(Profile::Full),
            _ => Err(HarnessError::Usage(format!(
                "unknown profile `{s}` (valid: desk, full)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub model: String,
    pub environment: String,
    /// Support size; `None` uses the environment default.
    pub k: Option<usize>,
    /// Query size; `None` uses the environment default.
    pub q: Option<usize>,
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub xi: f64,
    pub n_posterior_samples: usize,
    pub n_test_tasks: usize,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: ModelKind::Vmgp.as_str().into(),
            environment: "sin-standard".into(),
            k: None,
            q: None,
            iterations: 10_000,
            batch_size: 50,
            lr: 1e-3,
            seed: 0,
            xi: 0.1,
            n_posterior_samples: 20,
            n_test_tasks: 1_000,
            out: PathBuf::from("runs"),
        }
    }
}

/// A config whose ids and counts have been checked.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Validated {
    pub model: ModelKind,
    pub env: EnvId,
    pub k: usize,
    pub q: usize,
}

impl ExperimentConfig {
    pub fn with_profile(profile: Profile) -> Self {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_profile(profile);
        cfg
    }

    pub fn apply_profile(&mut self, profile: Profile) {
        let (iterations, n_test_tasks) = match profile {
            Profile::Desk => (2_000, 500),
            Profile::Full => (10_000, 1_000),
        };
        self.iterations = iterations;
        self.n_test_tasks = n_test_tasks;
    }

    pub fn validate(&self) -> Result<Validated, HarnessError> {
        let model: ModelKind = self.model.parse()?;
        let env: EnvId = self.environment.parse().map_err(|_| {
            HarnessError::Usage(format!(
                "unknown environment `{}` (valid: {})",
                self.environment,
                EnvId::valid_ids()
            ))
        })?;
        let k = self.k.unwrap_or(env.default_k());
        let q = self.q.unwrap_or(env.default_q());
        let counts = [
            ("k", k),
            ("q", q),
            ("batch_size", self.batch_size),
            ("n_posterior_samples", self.n_posterior_samples),
            ("n_test_tasks", self.n_test_tasks),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(HarnessError::Usage(format!("`{name}` must be positive")));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(HarnessError::Usage("`lr` must be positive".into()));
        }
        if !(self.xi > 0.0 && self.xi.is_finite()) {
            return Err(HarnessError::Usage("`xi` must be positive".into()));
        }
        if self.n_test_tasks * q < 2 {
            return Err(HarnessError::Usage(
                "need at least two query points in total to report a standard error".into(),
            ));
        }
        Ok(Validated { model, env, k, q })
    }

    /// Overlays the keys of a JSON object onto `base`. Unknown keys and
    /// ill-typed values are usage errors naming the key.
    pub fn from_json(text: &str, base: &ExperimentConfig) -> Result<Self, HarnessError> {
        let overlay = parse_object(text)?;
        Self::from_object(overlay, base)
    }

    fn from_object(
        overlay: Map<String, Value>,
        base: &ExperimentConfig,
    ) -> Result<Self, HarnessError> {
        let Value::Object(mut merged) = serde_json::to_value(base).expect("config serializes")
        else {
            unreachable!("config serializes to an object")
        };
        merged.extend(overlay);
        serde_path_to_error::deserialize(Value::Object(merged)).map_err(|e| {
            let path = e.path().to_string();
            if path == "." {
                HarnessError::Usage(format!("invalid config: {}", e.inner()))
            } else {
                HarnessError::Usage(format!("invalid config key `{path}`: {}", e.inner()))
            }
        })
    }
}

fn parse_object(text: &str) -> Result<Map<String, Value>, HarnessError> {
    match serde_json::from_str(text) {
        Ok(Value::Object(map)) => Ok(map),
        Ok(_) => Err(HarnessError::Usage("config must be a JSON object".into())),
        Err(e) => Err(HarnessError::Usage(format!("malformed config JSON: {e}"))),
    }
}

/// Cartesian grid of runs: `models × environments × seeds`, sharing every
/// other field.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub models: Vec<String>,
    pub environments: Vec<String>,
    pub seeds: Vec<u64>,
    pub base: ExperimentConfig,
}

impl SweepConfig {
    pub fn from_json(text: &str, base: &ExperimentConfig) -> Result<Self, HarnessError> {
        let mut map = parse_object(text)?;
        let models = take_list(&mut map, "models")?
            .ok_or_else(|| HarnessError::Usage("sweep config needs `models`".into()))?;
        let environments = take_list(&mut map, "environments")?
            .ok_or_else(|| HarnessError::Usage("sweep config needs `environments`".into()))?;
        let seeds = take_list(&mut map, "seeds")?;
        let base = ExperimentConfig::from_object(map, base)?;
        let seeds = seeds.unwrap_or_else(|| vec![base.seed]);
        if models.is_empty() || environments.is_empty() || seeds.is_empty() {
            return Err(HarnessError::Usage("sweep lists must be non-empty".into()));
        }
        Ok(SweepConfig {
            models,
            environments,
            seeds,
            base,
        })
    }

    pub fn expand(&self) -> Vec<ExperimentConfig> {
        let mut out = Vec::new();
        for model in &self.models {
            for env in &self.environments {
                for &seed in &self.seeds {
                    out.push(ExperimentConfig {
                        model: model.clone(),
                        environment: env.clone(),
                        seed,
                        ..self.base.clone()
                    });
                }
            }
        }
        out
    }
}

fn take_list<T: serde::de::DeserializeOwned>(
    map: &mut Map<String, Value>,
    key: &str,
) -> Result<Option<Vec<T>>, HarnessError> {
    map.remove(key)
        .map(|v| {
            serde_json::from_value(v)
                .map_err(|e| HarnessError::Usage(format!("invalid config key `{key}`: {e}")))
        })
        .transpose()
}
