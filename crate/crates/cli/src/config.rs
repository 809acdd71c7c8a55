//! Config loading: a JSON object, overlaid with command-line flags, then
//! deserialized strictly so misspelled keys are rejected.

use std::path::{Path, PathBuf};

use eio_core::datagen::{DirectModelSpec, IvSpec, RegressionSpec};
use eio_core::estimator::SolveOptions;
use eio_core::harness::{reference_spec, RateSpec};
use eio_core::penalty::PenaltyConfig;
use eio_core::{EioError, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

/// Flags that may override config keys of the same name.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub x: Option<f64>,
    pub replicates: Option<usize>,
}

impl Overrides {
    fn entries(&self) -> Vec<(&'static str, Value)> {
        let mut out = Vec::new();
        if let Some(v) = self.seed {
            out.push(("seed", Value::from(v)));
        }
        if let Some(v) = self.jobs {
            out.push(("jobs", Value::from(v)));
        }
        if let Some(v) = self.x {
            out.push(("x", Value::from(v)));
        }
        if let Some(v) = self.replicates {
            out.push(("replicates", Value::from(v)));
        }
        out
    }

    /// Writes the flags into `base`; a flag the command does not use is an error.
    pub fn apply(&self, base: &mut Map<String, Value>, command: &str, accepted: &[&str]) -> Result<()> {
        for (key, value) in self.entries() {
            if !accepted.contains(&key) {
                return Err(EioError::Invalid(format!("--{key} is not used by `{command}`")));
            }
            base.insert(key.to_string(), value);
        }
        Ok(())
    }
}

/// Reads the config file as a JSON object, or returns `default` when absent.
pub fn load_object(path: Option<&Path>, default: impl FnOnce() -> Value) -> Result<Map<String, Value>> {
    let value = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| EioError::Invalid(format!("cannot read config {}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| EioError::Parse {
                path: p.display().to_string(),
                line: e.line(),
                msg: e.to_string(),
            })?
        }
        None => default(),
    };
    match value {
        Value::Object(map) => Ok(map),
        _ => Err(EioError::Invalid("config must be a JSON object".into())),
    }
}

pub fn decode<T: DeserializeOwned>(map: Map<String, Value>, origin: &str) -> Result<T> {
    serde_json::from_value(Value::Object(map)).map_err(|e| EioError::Invalid(format!("{origin}: {e}")))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorConfig {
    Direct(DirectModelSpec),
    RandomDesign(RegressionSpec),
    Iv(IvSpec),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub generator: GeneratorConfig,
    #[serde(default)]
    pub seed: u64,
    /// Replicate index; `None` draws from the base streams.
    #[serde(default)]
    pub replicate: Option<u64>,
}

impl SimulateConfig {
    /// The reference direct model at `N₁ = μ² = 10⁴`.
    pub fn default_value() -> Value {
        let mut generator = serde_json::to_value(reference_spec(1, 0, 1).generator).expect("serializable");
        generator["kind"] = Value::from("direct");
        serde_json::json!({ "generator": generator })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateConfig {
    /// Directory holding `Z.csv`, `A_hat.csv` and `meta.json`; relative paths
    /// resolve against the config file's directory.
    pub instance: PathBuf,
    /// Overrides `mu2` from `meta.json`.
    #[serde(default)]
    pub mu2: Option<f64>,
    #[serde(default)]
    pub penalty: PenaltyConfig,
    #[serde(default)]
    pub solve: SolveOptions,
}

pub fn default_verify_value() -> Value {
    serde_json::to_value(reference_spec(500, 0, 1)).expect("serializable")
}

pub fn default_rate_value() -> Value {
    let spec = RateSpec {
        p: 100,
        q_factor: 1.5,
        s: 1.0,
        beta: 1.0,
        c_w: 1.0,
        n1_grid: vec![1e3, 1e4, 1e5, 1e6],
        replicates: 200,
        seed: 0,
        jobs: 1,
        sigma_omega: 1.0,
        sigma_u: 1.0,
        mu2_factor: 1.0,
        solve: SolveOptions::default(),
    };
    serde_json::to_value(spec).expect("serializable")
}

/// Resolves `path` against the directory of the config file, if any.
pub fn resolve(path: &Path, config: Option<&Path>) -> PathBuf {
    match config.and_then(Path::parent) {
        Some(dir) if path.is_relative() => dir.join(path),
        _ => path.to_path_buf(),
    }
}
