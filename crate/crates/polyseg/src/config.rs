//! Run configuration: a TOML file with `model.*`, `loss.*`, `train.*` and
//! `data.*` sections, plus dotted `key=value` overrides that win over it.

use std::collections::BTreeSet;
use std::path::Path;

use polyseg_core::data::{AugmentConfig, SyntheticSpec};
use polyseg_core::losses::LossConfig;
use polyseg_core::training::{ModelConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::{Table, Value};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("override `{0}` is not of the form key=value")]
    MalformedOverride(String),
    #[error("cannot read config {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("config {0}")]
    Parse(String),
    #[error(transparent)]
    Invalid(#[from] polyseg_core::Error),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Training dataset root (`images/`, `masks/`); empty means synthetic.
    pub root: String,
    /// Evaluation dataset root for sweeps; empty means a held-out synthetic
    /// set, or the training data when `root` is set.
    pub test_root: String,
    pub synthetic: SyntheticSpec,
    /// Size of the held-out synthetic evaluation set.
    pub synthetic_test_samples: usize,
    pub augment: AugmentConfig,
    pub threshold: f32,
}

impl DataConfig {
    fn defaults() -> Self {
        Self { synthetic_test_samples: 8, threshold: 0.5, ..Self::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub loss: LossConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "DataConfig::defaults")]
    pub data: DataConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            train: TrainConfig::default(),
            data: DataConfig::defaults(),
        }
    }
}

/// Dotted paths of every leaf in `table`.
fn leaf_keys(table: &Table, prefix: &str, out: &mut BTreeSet<String>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(t) => leaf_keys(t, &key, out),
            _ => {
                out.insert(key);
            }
        }
    }
}

fn default_table() -> Table {
    Table::try_from(RunConfig::default()).expect("default config serializes")
}

/// Every accepted dotted key.
pub fn known_keys() -> BTreeSet<String> {
    let mut keys = BTreeSet::new();
    leaf_keys(&default_table(), "", &mut keys);
    keys
}

fn set_path(table: &mut Table, key: &str, value: Value) {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("non-empty key");
    let mut cur = table;
    for p in parts {
        cur = cur
            .entry(p.to_string())
            .or_insert_with(|| Value::Table(Table::new()))
            .as_table_mut()
            .expect("known keys never pass through a leaf");
    }
    cur.insert(last.to_string(), value);
}

/// Parses the right-hand side as a TOML value, falling back to a bare
/// string (`loss.combo=bdice`).
fn parse_value(raw: &str) -> Value {
    toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

impl RunConfig {
    /// Defaults, then the file, then the overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let keys = known_keys();
        let mut merged = default_table();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)
                .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
            let file: Table = toml::from_str(&text).map_err(|e| ConfigError::Parse(format!("{}: {e}", path.display())))?;
            let mut file_keys = BTreeSet::new();
            leaf_keys(&file, "", &mut file_keys);
            for key in file_keys {
                if !keys.contains(&key) {
                    return Err(ConfigError::UnknownKey(key));
                }
                set_path(&mut merged, &key, lookup(&file, &key).expect("key came from this table").clone());
            }
        }
        for o in overrides {
            let (key, raw) = o.split_once('=').ok_or_else(|| ConfigError::MalformedOverride(o.clone()))?;
            let key = key.trim();
            if !keys.contains(key) {
                return Err(ConfigError::UnknownKey(key.to_string()));
            }
            set_path(&mut merged, key, parse_value(raw.trim()));
        }
        let cfg: RunConfig = Value::Table(merged).try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), polyseg_core::Error> {
        self.model.generator.validate()?;
        self.model.discriminator.validate()?;
        self.loss.validate()?;
        self.train.validate()?;
        self.data.augment.validate()?;
        if self.data.root.is_empty() {
            self.data.synthetic.validate()?;
        }
        if !(0.0..=1.0).contains(&self.data.threshold) {
            return Err(polyseg_core::Error::Config("data.threshold must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Applies `--seed` to training, augmentation and synthetic data.
    pub fn reseed(&mut self, seed: u64) {
        self.train.seed = seed;
        self.data.augment.seed = seed;
        self.data.synthetic.seed = seed;
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Stable digest of the model architecture.
    pub fn model_fingerprint(model: &ModelConfig) -> u64 {
        let text = toml::to_string(model).expect("model config serializes");
        let digest = Sha256::digest(text.as_bytes());
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
    }
}

fn lookup<'a>(table: &'a Table, key: &str) -> Option<&'a Value> {
    let mut parts = key.split('.');
    let mut cur = table.get(parts.next()?)?;
    for p in parts {
        cur = cur.as_table()?.get(p)?;
    }
    Some(cur)
}
