//! Run configuration file: `{seed, model, train, mixup, task, vocab, paths}`.

use std::fs;
use std::path::{Path, PathBuf};

use mixf::data::TaskSpec;
use mixf::mixup::MixupConfig;
use mixf::model::ModelConfig;
use mixf::trainer::TrainConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::CliError;

/// Environment variable that overrides the output directory.
pub const OUT_ENV: &str = "MIXF_OUT";
const DEFAULT_OUT: &str = "mixf-out";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub dropout_rate: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        ModelSection {
            d_model: m.d_model,
            n_heads: m.n_heads,
            n_layers: m.n_layers,
            d_ff: m.d_ff,
            max_len: m.max_len,
            dropout_rate: m.dropout_rate,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub grad_clip_norm: Option<f64>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            beta1: t.beta1,
            beta2: t.beta2,
            adam_eps: t.adam_eps,
            weight_decay: t.weight_decay,
            grad_clip_norm: t.grad_clip_norm,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VocabSection {
    pub min_count: usize,
    /// Total size including the reserved tokens.
    pub max_size: usize,
}

impl Default for VocabSection {
    fn default() -> Self {
        VocabSection {
            min_count: 1,
            max_size: 30_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub train: PathBuf,
    pub dev: PathBuf,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub mixup: MixupConfig,
    pub task: TaskSpec,
    #[serde(default)]
    pub vocab: VocabSection,
    pub paths: Paths,
}

impl RunConfig {
    /// Reads `path`, applies `key.path=value` overrides and then the seed
    /// override, and resolves relative data paths against the file's folder.
    pub fn load(path: &Path, overrides: &[String], seed: Option<u64>) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read config {}: {e}", path.display())))?;
        let mut value: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Input(format!("config {}: {e}", path.display())))?;
        for item in overrides {
            apply_override(&mut value, item)?;
        }
        if let Some(seed) = seed {
            set_path(&mut value, "seed", Value::from(seed))?;
        }
        let mut config: RunConfig = serde_json::from_value(value)
            .map_err(|e| CliError::Input(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        config.paths.train = resolve(base, &config.paths.train);
        config.paths.dev = resolve(base, &config.paths.dev);
        config.paths.out = config.paths.out.as_ref().map(|p| resolve(base, p));
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.task.validate()?;
        self.mixup.validate()?;
        self.model_config(16).validate()?;
        self.train_config().validate()?;
        Ok(())
    }

    /// Model hyperparameters for a vocabulary of `vocab_size` tokens.
    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            vocab_size,
            d_model: m.d_model,
            n_heads: m.n_heads,
            n_layers: m.n_layers,
            d_ff: m.d_ff,
            max_len: m.max_len,
            head: self.task.head(),
            dropout_rate: m.dropout_rate,
            seed: self.seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            beta1: t.beta1,
            beta2: t.beta2,
            adam_eps: t.adam_eps,
            weight_decay: t.weight_decay,
            grad_clip_norm: t.grad_clip_norm,
            seed: self.seed,
            mixup: self.mixup.clone(),
        }
    }

    /// `MIXF_OUT` wins over `paths.out`, which wins over the default.
    pub fn out_dir(&self) -> PathBuf {
        out_dir_or(self.paths.out.clone())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }
}

pub fn out_dir_or(configured: Option<PathBuf>) -> PathBuf {
    match std::env::var_os(OUT_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => configured.unwrap_or_else(|| PathBuf::from(DEFAULT_OUT)),
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// `train.epochs=5`, `mixup.enabled=false`, `task.name=rte`: the value is
/// parsed as JSON and falls back to a plain string.
pub fn apply_override(root: &mut Value, item: &str) -> Result<(), CliError> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| CliError::Input(format!("override '{item}' is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    set_path(root, key.trim(), value)
}

fn set_path(root: &mut Value, key: &str, value: Value) -> Result<(), CliError> {
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(CliError::Input(format!("bad override key '{key}'")));
    }
    let mut node = root;
    let mut parts = key.split('.').peekable();
    while let Some(part) = parts.next() {
        let map = node
            .as_object_mut()
            .ok_or_else(|| CliError::Input(format!("override '{key}': '{part}' is not inside an object")))?;
        if parts.peek().is_none() {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        node = map
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("key has at least one part")
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn overrides_nest_and_parse() {
        let mut v = json!({"train": {"epochs": 3}});
        apply_override(&mut v, "train.epochs=5").unwrap();
        apply_override(&mut v, "mixup.enabled=false").unwrap();
        apply_override(&mut v, "task.name=rte").unwrap();
        assert_eq!(v, json!({"train": {"epochs": 5}, "mixup": {"enabled": false}, "task": {"name": "rte"}}));
        assert!(apply_override(&mut v, "novalue").is_err());
        assert!(apply_override(&mut v, "train..x=1").is_err());
        assert!(apply_override(&mut v, "train.epochs.deep=1").is_err());
    }
}
