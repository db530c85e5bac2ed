//! Run configuration: JSON schema, scale overrides, validation, and hashing.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use distmatch_core::charfn::{build_weighted_grid, FrequencyGrid, TargetSpec};
use distmatch_core::environment::EnvSpec;
use distmatch_core::policy::PolicyConfig;
use distmatch_core::rollout::ReferencePolicy;
use distmatch_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

/// A configuration problem, reported with the JSON path of the offending key.
#[derive(Debug)]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.path.is_empty() || self.path == "." {
            write!(f, "{}", self.message)
        } else {
            write!(f, "`{}`: {}", self.path, self.message)
        }
    }
}

fn cfg_err(path: &str, message: impl std::fmt::Display) -> ConfigError {
    ConfigError {
        path: path.to_string(),
        message: message.to_string(),
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Scale {
    #[default]
    Desk,
    Paper,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(rename = "K")]
    pub k: f64,
    #[serde(rename = "L")]
    pub l: usize,
    pub alpha: f64,
    #[serde(default)]
    pub weight_scale: Option<f64>,
}

impl GridConfig {
    pub fn build(&self) -> distmatch_core::Result<FrequencyGrid> {
        build_weighted_grid(self.k, self.l, self.alpha, self.weight_scale.unwrap_or(1.0))
    }
}

/// Target law: an analytic or file-backed spec, or samples generated here.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TargetConfig {
    /// Terminal returns of a closed-form policy on the run's environment.
    ReferencePolicy {
        policy: ReferencePolicy,
        samples: usize,
        #[serde(default)]
        seed: u64,
    },
    /// Exact terminal wealth when everything is held in the stock.
    Lognormal {
        samples: usize,
        #[serde(default)]
        seed: u64,
    },
    #[serde(untagged)]
    Spec(TargetSpec),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    /// Write a checkpoint every this many iterations (0 disables).
    #[serde(default)]
    pub checkpoint_every: usize,
    #[serde(default)]
    pub dump_trajectories: bool,
    /// Trajectories simulated from the final policy for the reports.
    #[serde(default)]
    pub eval_samples: Option<usize>,
}

fn default_dir() -> PathBuf {
    PathBuf::from("runs/latest")
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: default_dir(),
            checkpoint_every: 0,
            dump_trajectories: false,
            eval_samples: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TorusTarget {
    WrappedGaussian { m: f64, sigma2: f64 },
    DiracAt { c: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum OracleConfig {
    JacobiAnger {
        #[serde(default)]
        s0: f64,
        sigma: f64,
        #[serde(rename = "V", default = "one")]
        v: f64,
        #[serde(default = "sixteen")]
        k_modes: usize,
        grid: GridConfig,
        #[serde(default = "default_density_points")]
        density_points: usize,
        #[serde(default = "default_interval")]
        interval: (f64, f64),
        /// Returns simulated through the reconstructed density for the W1 check.
        #[serde(default = "default_check_samples")]
        samples: usize,
        #[serde(default)]
        seed: u64,
    },
    TorusDeconvolve {
        #[serde(default)]
        s0: f64,
        sigma: f64,
        modes: usize,
        target: TorusTarget,
    },
}

fn one() -> f64 {
    1.0
}
fn sixteen() -> usize {
    16
}
fn default_density_points() -> usize {
    2001
}
fn default_interval() -> (f64, f64) {
    (-PI, PI)
}
fn default_check_samples() -> usize {
    100_000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub scale: Scale,
    /// Overrides merged in when running at paper scale.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paper: Option<Value>,
    #[serde(default)]
    pub env: Option<EnvSpec>,
    #[serde(default)]
    pub policy: Option<PolicyConfig>,
    #[serde(default)]
    pub grid: Option<GridConfig>,
    #[serde(default)]
    pub target: Option<TargetConfig>,
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub outputs: OutputConfig,
    #[serde(default)]
    pub oracle: Option<OracleConfig>,
}

/// Command-line overrides applied on top of the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub scale: Option<Scale>,
    pub out: Option<PathBuf>,
}

/// Recursively overlays `over` onto `base`; objects merge, everything else replaces.
pub fn merge(base: &mut Value, over: &Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                merge(b.entry(k.clone()).or_insert(Value::Null), v);
            }
        }
        (b, o) => *b = o.clone(),
    }
}

/// Canonical JSON (sorted keys) SHA-256 of a configuration value.
pub fn config_hash(value: &Value) -> String {
    // serde_json's map keeps keys sorted, so this rendering is canonical
    let canon = serde_json::to_string(value).expect("json value serializes");
    hex::encode(Sha256::digest(canon.as_bytes()))
}

pub struct LoadedConfig {
    pub config: RunConfig,
    /// The effective configuration after overrides, as hashed.
    pub value: Value,
    pub hash: String,
}

pub fn load(path: &Path, overrides: &Overrides) -> Result<LoadedConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| cfg_err("", format!("cannot read {}: {e}", path.display())))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| cfg_err("", format!("{}: {e}", path.display())))?;
    from_value(value, overrides)
}

pub fn from_value(mut value: Value, overrides: &Overrides) -> Result<LoadedConfig, ConfigError> {
    if !value.is_object() {
        return Err(cfg_err("", "configuration must be a JSON object"));
    }
    if let Some(scale) = overrides.scale {
        value["scale"] = serde_json::to_value(scale).expect("scale serializes");
    }
    if value.get("scale").and_then(Value::as_str) == Some("paper") {
        if let Some(over) = value.get("paper").cloned() {
            merge(&mut value, &over);
        }
    }
    if let Some(seed) = overrides.seed {
        if value.get("train").is_some_and(Value::is_object) {
            value["train"]["seed"] = seed.into();
        }
        if value.get("policy").is_some_and(Value::is_object) {
            value["policy"]["seed"] = seed.into();
        }
    }
    if let Some(out) = &overrides.out {
        if !value.get("outputs").is_some_and(Value::is_object) {
            value["outputs"] = serde_json::json!({});
        }
        value["outputs"]["dir"] = out.to_string_lossy().into_owned().into();
    }
    let config: RunConfig = serde_path_to_error::deserialize(value.clone()).map_err(|e| {
        let path = e.path().to_string();
        cfg_err(&path, e.into_inner())
    })?;
    config.validate()?;
    let hash = config_hash(&value);
    Ok(LoadedConfig { config, value, hash })
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if let Some(env) = &self.env {
            env.validate().map_err(|e| cfg_err("env", e))?;
        }
        if let Some(p) = &self.policy {
            p.validate().map_err(|e| cfg_err("policy", e))?;
        }
        if let Some(g) = &self.grid {
            g.build().map_err(|e| cfg_err("grid", e))?;
        }
        if let Some(t) = &self.train {
            if t.m == 0 {
                return Err(cfg_err("train.M", "batch size must be at least 1"));
            }
            t.validate().map_err(|e| cfg_err("train", e))?;
        }
        match &self.target {
            Some(TargetConfig::Spec(spec)) => {
                spec.validate().map_err(|e| cfg_err("target", e))?;
                if let TargetSpec::TableFile { path } = spec {
                    if !path.exists() {
                        return Err(cfg_err("target.path", format!("{} does not exist", path.display())));
                    }
                }
                if matches!(spec, TargetSpec::WrappedGaussian { .. }) {
                    let torus = matches!(
                        self.env.as_ref().map(|e| &e.kind),
                        Some(distmatch_core::environment::EnvKind::Torus { .. })
                    );
                    if !torus {
                        return Err(cfg_err("target", "wrapped-gaussian targets need a torus environment"));
                    }
                    if let Some(g) = &self.grid {
                        let du = 2.0 * g.k / g.l as f64;
                        if g.k.fract() != 0.0 || du.fract() != 0.0 {
                            return Err(cfg_err("grid", "wrapped-gaussian targets need integer grid nodes"));
                        }
                    }
                }
            }
            Some(TargetConfig::ReferencePolicy { samples, .. }) | Some(TargetConfig::Lognormal { samples, .. })
                if *samples == 0 =>
            {
                return Err(cfg_err("target.samples", "need at least one target sample"));
            }
            Some(TargetConfig::Lognormal { .. }) => {
                if !matches!(
                    self.env.as_ref().map(|e| &e.kind),
                    Some(distmatch_core::environment::EnvKind::Wealth { .. })
                ) {
                    return Err(cfg_err("target", "lognormal targets need a wealth environment"));
                }
            }
            _ => {}
        }
        if self.outputs.eval_samples == Some(0) {
            return Err(cfg_err("outputs.eval_samples", "must be at least 1"));
        }
        Ok(())
    }

    /// The pieces `train` needs, or the name of the first missing section.
    pub fn training_parts(&self) -> Result<(&EnvSpec, &PolicyConfig, &GridConfig, &TargetConfig, &TrainConfig), ConfigError> {
        let missing = |k: &str| cfg_err(k, "section is required for training");
        Ok((
            self.env.as_ref().ok_or_else(|| missing("env"))?,
            self.policy.as_ref().ok_or_else(|| missing("policy"))?,
            self.grid.as_ref().ok_or_else(|| missing("grid"))?,
            self.target.as_ref().ok_or_else(|| missing("target"))?,
            self.train.as_ref().ok_or_else(|| missing("train"))?,
        ))
    }
}
