//! Flat key-value run configuration.
//!
//! A config file is TOML with one key per CLI flag (`lambda-points = 40`).
//! A run manifest (JSON) is also accepted; its `config` object is used.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::bench::Method;
use crate::error::{Error, Result};

/// Per-command settings with defaults for every key.
pub trait Section: Serialize + DeserializeOwned + Default {
    /// Subcommand name, used to check manifests.
    const COMMAND: &'static str;

    fn keys() -> Vec<String> {
        match serde_json::to_value(Self::default()) {
            Ok(Value::Object(map)) => map.keys().cloned().collect(),
            _ => Vec::new(),
        }
    }
}

/// Reads and validates a config file; `None` yields the defaults.
pub fn load_config<T: Section>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text, path.extension().is_some_and(|e| e == "json"))
}

pub fn parse_config<T: Section>(text: &str, json: bool) -> Result<T> {
    let map = if json || text.trim_start().starts_with('{') {
        let value: Value =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid JSON config: {e}")))?;
        let Value::Object(mut obj) = value else {
            return Err(Error::Config("JSON config must be an object".into()));
        };
        if let Some(Value::Object(inner)) = obj.remove("config") {
            match obj.get("command").and_then(Value::as_str) {
                Some(cmd) if cmd != T::COMMAND => {
                    return Err(Error::Config(format!(
                        "manifest is for `{cmd}`, not `{}`",
                        T::COMMAND
                    )))
                }
                _ => inner,
            }
        } else {
            obj
        }
    } else {
        let table: toml::Table =
            toml::from_str(text).map_err(|e| Error::Config(format!("invalid TOML config: {e}")))?;
        match serde_json::to_value(table)? {
            Value::Object(obj) => obj,
            _ => unreachable!("a TOML table is an object"),
        }
    };
    from_map(map)
}

fn from_map<T: Section>(map: Map<String, Value>) -> Result<T> {
    let keys = T::keys();
    let Value::Object(defaults) = serde_json::to_value(T::default())? else {
        unreachable!("sections serialize to objects")
    };
    for (key, value) in &map {
        if !keys.contains(key) {
            return Err(unknown_key(key, &keys));
        }
        let mut probe = defaults.clone();
        probe.insert(key.clone(), value.clone());
        serde_json::from_value::<T>(Value::Object(probe))
            .map_err(|e| Error::Config(format!("key `{key}`: {e}")))?;
    }
    let mut merged = defaults;
    merged.extend(map);
    serde_json::from_value(Value::Object(merged)).map_err(|e| Error::Config(e.to_string()))
}

fn unknown_key(key: &str, keys: &[String]) -> Error {
    let best = keys
        .iter()
        .map(|k| (strsim::levenshtein(key, k), k))
        .min()
        .filter(|(d, _)| *d <= 3);
    let hint = best.map(|(_, k)| format!("; did you mean `{k}`?")).unwrap_or_default();
    Error::Config(format!("unknown key `{key}`{hint} (valid keys: {})", keys.join(", ")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct SynthDemoConfig {
    pub m: usize,
    pub d: usize,
    pub n: usize,
    pub density: f64,
    /// `lambda = alpha * ln(m) / n` for each entry.
    pub alpha: Vec<f64>,
    pub seed: u64,
    pub epsilon: f64,
    pub tau: Vec<f64>,
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for SynthDemoConfig {
    fn default() -> Self {
        Self {
            m: 50,
            d: 6,
            n: 500,
            density: 0.1,
            alpha: vec![0.75, 1.0, 1.25],
            seed: 7,
            epsilon: 0.2,
            tau: vec![0.0, 0.1, 0.2],
            max_iterations: 5000,
            tolerance: 1e-8,
        }
    }
}

impl Section for SynthDemoConfig {
    const COMMAND: &'static str = "synth-demo";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct RocBenchConfig {
    pub method: Vec<Method>,
    pub m: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
    pub n: usize,
    pub lambda_points: usize,
    pub lambda_ratio: f64,
    pub epsilon: f64,
    pub tau_points: usize,
    pub score_diagonal: bool,
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for RocBenchConfig {
    fn default() -> Self {
        let b = crate::bench::BenchConfig::default();
        Self {
            method: b.methods,
            m: b.m,
            trials: b.trials,
            seed: b.seed,
            n: b.n,
            lambda_points: b.lambda_points,
            lambda_ratio: b.lambda_ratio,
            epsilon: b.epsilon,
            tau_points: b.tau_points,
            score_diagonal: b.score_diagonal,
            max_iterations: b.solver.max_iterations,
            tolerance: b.solver.tolerance,
        }
    }
}

impl Section for RocBenchConfig {
    const COMMAND: &'static str = "roc-bench";
}

impl RocBenchConfig {
    pub fn to_bench(&self) -> crate::bench::BenchConfig {
        let mut b = crate::bench::BenchConfig {
            methods: self.method.clone(),
            m: self.m.clone(),
            trials: self.trials,
            seed: self.seed,
            n: self.n,
            lambda_points: self.lambda_points,
            lambda_ratio: self.lambda_ratio,
            epsilon: self.epsilon,
            tau_points: self.tau_points,
            score_diagonal: self.score_diagonal,
            ..Default::default()
        };
        b.solver.max_iterations = self.max_iterations;
        b.solver.tolerance = self.tolerance;
        b
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct ImageDiffConfig {
    pub image_p: Option<String>,
    pub image_q: Option<String>,
    /// Generate the procedural scene pair with this seed instead of reading images.
    pub demo_seed: Option<u64>,
    pub window: usize,
    pub stride: usize,
    pub bandwidth: f64,
    pub target: usize,
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for ImageDiffConfig {
    fn default() -> Self {
        let d = crate::imagediff::DetectConfig::default();
        Self {
            image_p: None,
            image_q: None,
            demo_seed: None,
            window: d.window,
            stride: d.stride,
            bandwidth: d.bandwidth,
            target: d.target,
            max_iterations: d.solver.max_iterations,
            tolerance: d.solver.tolerance,
        }
    }
}

impl Section for ImageDiffConfig {
    const COMMAND: &'static str = "image-diff";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct DiagnoseConfig {
    pub m: usize,
    pub d: usize,
    pub n: usize,
    pub density: f64,
    pub seed: u64,
    pub cap: usize,
}

impl Default for DiagnoseConfig {
    fn default() -> Self {
        Self {
            m: 50,
            d: 6,
            n: 5000,
            density: 0.1,
            seed: 7,
            cap: crate::kliep::DEFAULT_HESSIAN_CAP,
        }
    }
}

impl Section for DiagnoseConfig {
    const COMMAND: &'static str = "diagnose";
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Product,
    Rbf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct SolveConfig {
    pub xp: Option<String>,
    pub xq: Option<String>,
    pub method: Method,
    /// Explicit `lambda`; when absent `lambda-fraction * lambda_max` is used.
    pub lambda: Option<f64>,
    pub lambda_fraction: f64,
    pub feature: FeatureKind,
    pub bandwidth: f64,
    pub epsilon: f64,
    pub tau: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            xp: None,
            xq: None,
            method: Method::Kliep,
            lambda: None,
            lambda_fraction: 0.1,
            feature: FeatureKind::Product,
            bandwidth: 1.0,
            epsilon: 0.2,
            tau: 0.0,
            max_iterations: 5000,
            tolerance: 1e-8,
        }
    }
}

impl Section for SolveConfig {
    const COMMAND: &'static str = "solve";
}
