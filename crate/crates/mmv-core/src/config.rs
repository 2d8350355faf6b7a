//! Run configuration: strict JSON schema (unknown keys rejected, with
//! JSON-pointer error paths), default injection, and the output manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::engine::SimConfig;
use crate::error::{MmvError, Result};
use crate::frozen::FrozenConfig;
use crate::model::{ModelConfig, ModelSpec};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
    #[default]
    Both,
}

/// Experiment block: name plus the union of per-experiment knobs. Unused
/// knobs for a given experiment are rejected at validation.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_list: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_fns: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transient_eps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_max: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nodes: Option<usize>,
    /// "correct" or "naive".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<String>,
    /// 1-d support atoms of the slow law for `frozen`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<Vec<f64>>,
    /// Extra 1-d slow evaluation points for `avg`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_points: Option<Vec<f64>>,
    /// Mollification indices.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_list: Option<Vec<u32>>,
    /// Recording times; defaults to {0, T/2, T}.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record: Option<Vec<f64>>,
    /// selftest suite selector ("oracle" or "all").
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suite: Option<String>,
    /// Moment orders probed by `check`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_list: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub sim: SimConfig,
    /// Defaults derived from the model's dissipativity constants.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frozen: Option<FrozenConfig>,
    pub experiment: ExperimentConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub format: OutputFormat,
}

pub const EXPERIMENTS: &[&str] = &[
    "simulate",
    "frozen",
    "avg",
    "iterate",
    "strong",
    "weak",
    "fast",
    "fluctuation",
    "demo-wrong-limit",
    "ergodicity",
    "check",
    "selftest",
];

impl RunConfig {
    /// Validates cross-field invariants, builds the model, and injects the
    /// frozen defaults; returns the built model.
    pub fn finalize(&mut self) -> Result<ModelSpec> {
        let model = self.model.build()?;
        self.sim.validate()?;
        if !EXPERIMENTS.contains(&self.experiment.name.as_str()) {
            return Err(MmvError::InvalidConfig(format!(
                "experiment.name: unknown experiment `{}`",
                self.experiment.name
            )));
        }
        if let Some(eps) = &self.experiment.eps_list {
            if eps.iter().any(|&e| e <= 0.0) || eps.windows(2).any(|w| w[1] >= w[0]) {
                return Err(MmvError::InvalidConfig(
                    "experiment.eps_list: must be positive and strictly decreasing".into(),
                ));
            }
        }
        if let Some(v) = &self.experiment.variant {
            if v != "correct" && v != "naive" {
                return Err(MmvError::InvalidConfig(format!(
                    "experiment.variant: expected \"correct\" or \"naive\", got \"{v}\""
                )));
            }
        }
        let frozen = self
            .frozen
            .take()
            .unwrap_or_else(|| FrozenConfig::for_model(&model, self.sim.seed));
        frozen.validate()?;
        self.frozen = Some(frozen);
        Ok(model)
    }
}

/// Parses and validates a run configuration file. Schema violations carry
/// the JSON-pointer path of the offending key.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    let mut de = serde_json::Deserializer::from_str(&text);
    let mut cfg: RunConfig = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        MmvError::InvalidConfig(format!("{}: at `{}`: {}", path.display(), e.path(), e.inner()))
    })?;
    cfg.finalize()?;
    Ok(cfg)
}

/// Run manifest: config echo (with injected defaults), output hashes, and
/// timing.
#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub config: RunConfig,
    pub seed: u64,
    pub threads: usize,
    /// sha256 of every artifact written by the run, keyed by file name.
    pub outputs: BTreeMap<String, String>,
    pub wall_time_s: f64,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    let mut h = Sha256::new();
    h.update(&bytes);
    Ok(format!("{:x}", h.finalize()))
}

/// Collects hashes of the given artifacts and writes `manifest.json` next to
/// them.
pub fn write_manifest(
    dir: &Path,
    config: &RunConfig,
    threads: usize,
    files: &[PathBuf],
    started: Instant,
) -> Result<PathBuf> {
    let mut outputs = BTreeMap::new();
    for f in files {
        let name = f
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| MmvError::InvalidConfig(format!("bad artifact path {f:?}")))?;
        outputs.insert(name.to_string(), sha256_file(f)?);
    }
    let manifest = Manifest {
        config: config.clone(),
        seed: config.sim.seed,
        threads,
        outputs,
        wall_time_s: started.elapsed().as_secs_f64(),
    };
    let path = dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(path)
}
