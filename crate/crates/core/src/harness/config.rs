use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::centers::{KMeansConfig, KMeansInit, SliceConfig};
use crate::diffusion::{DiffusionSchedule, ScheduleConfig};
use crate::error::{Error, Result};
use crate::fsutil;
use crate::inversion::AttackConfig;
use crate::seeds;
use crate::world::{PlantedCodes, WorldConfig};

/// Where the auxiliary and private codes come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DataSource {
    /// Hash samples of the Gaussian mixture through the linear oracle.
    #[serde(rename = "mixture")]
    Mixture,
    /// Bit-flipped copies of random planted centers; no vectors, no attack.
    #[serde(rename = "planted")]
    Planted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedConfig {
    pub k: usize,
    pub code_len: usize,
    pub flip_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub source: DataSource,
    pub n_aux: usize,
    pub n_priv: usize,
    /// Conditional samples per class behind each ground-truth center.
    pub truth_samples: usize,
    pub planted: PlantedConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Mixture,
            n_aux: 2000,
            n_priv: 1000,
            truth_samples: 500,
            planted: PlantedConfig {
                k: 20,
                code_len: 64,
                flip_prob: 0.05,
            },
        }
    }
}

impl DataConfig {
    pub fn planted_codes(&self) -> PlantedCodes {
        PlantedCodes {
            k: self.planted.k,
            code_len: self.planted.code_len,
            n: self.n_aux,
            flip_prob: self.planted.flip_prob,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationConfig {
    /// Cluster count; `null` means the true class count.
    pub k: Option<usize>,
    pub max_iters: usize,
    pub init: KMeansInit,
    pub slice: SliceConfig,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        Self {
            k: None,
            max_iters: 100,
            init: KMeansInit::KMeansPlusPlus,
            slice: SliceConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateConfig {
    /// Cluster size `m`.
    pub m: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Train each member on a bootstrap resample of the pseudo-labeled data.
    pub bootstrap: bool,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self {
            m: 3,
            epochs: 300,
            lr: 0.5,
            bootstrap: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    /// Not part of the digest: moving a run does not change its identity.
    pub output_dir: PathBuf,
    pub world: WorldConfig,
    pub data: DataConfig,
    pub estimation: EstimationConfig,
    pub schedule: ScheduleConfig,
    pub surrogates: SurrogateConfig,
    /// `attack.seed` is a sub-seed mixed with `master_seed`.
    pub attack: AttackConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            master_seed: 0,
            output_dir: PathBuf::from("runs/default"),
            world: WorldConfig::default(),
            data: DataConfig::default(),
            estimation: EstimationConfig::default(),
            schedule: ScheduleConfig::default(),
            surrogates: SurrogateConfig::default(),
            attack: AttackConfig::default(),
        }
    }
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

/// Recursively overlays `patch` on `base`; keys absent from `base` are errors.
fn merge(base: &mut Value, patch: Value, path: &str) -> Result<()> {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                let sub = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                let slot = b.get_mut(&k).ok_or_else(|| config_err(format!("unknown config key `{sub}`")))?;
                merge(slot, v, &sub)?;
            }
            Ok(())
        }
        (slot, v) => {
            *slot = v;
            Ok(())
        }
    }
}

/// Parses an override value as JSON, falling back to a bare string.
fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

impl ExperimentConfig {
    /// Defaults, then the optional JSON file, then `key=value` overrides.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut value = serde_json::to_value(Self::default()).expect("config serializes");
        if let Some(path) = file {
            let text = fsutil::read_to_string(path)?;
            let patch: Value = serde_json::from_str(&text).map_err(|e| Error::Json {
                path: path.to_path_buf(),
                source: e,
            })?;
            if !patch.is_object() {
                return Err(config_err(format!("{} must hold a JSON object", path.display())));
            }
            merge(&mut value, patch, "")?;
        }
        for o in overrides {
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| config_err(format!("override `{o}` is not key=value")))?;
            set_path(&mut value, key.trim(), parse_value(raw.trim()))?;
        }
        let cfg: Self = serde_json::from_value(value).map_err(|e| config_err(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Copy with one dotted key replaced.
    pub fn with_override(&self, key: &str, value: Value) -> Result<Self> {
        let mut v = serde_json::to_value(self).expect("config serializes");
        set_path(&mut v, key, value)?;
        let cfg: Self = serde_json::from_value(v).map_err(|e| config_err(format!("invalid value for `{key}`: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        let d = &self.data;
        if d.n_aux == 0 {
            return Err(config_err("data.n_aux must be >= 1: the attack needs auxiliary codes"));
        }
        if d.n_priv == 0 || d.truth_samples == 0 {
            return Err(config_err("data.n_priv and data.truth_samples must be >= 1"));
        }
        if d.planted.k == 0 || d.planted.code_len == 0 || !(0.0..=1.0).contains(&d.planted.flip_prob) {
            return Err(config_err("data.planted needs k, code_len >= 1 and flip_prob in [0, 1]"));
        }
        self.estimation.slice.validate()?;
        self.kmeans_config().validate(d.n_aux)?;
        let schedule = self.schedule()?;
        self.attack.validate(&schedule)?;
        let s = &self.surrogates;
        if s.m == 0 || s.epochs == 0 || !(s.lr > 0.0) {
            return Err(config_err("surrogates need m >= 1, epochs >= 1, lr > 0"));
        }
        Ok(())
    }

    /// Number of ground-truth classes in the configured data source.
    pub fn true_classes(&self) -> usize {
        match self.data.source {
            DataSource::Mixture => self.world.k,
            DataSource::Planted => self.data.planted.k,
        }
    }

    pub fn code_len(&self) -> usize {
        match self.data.source {
            DataSource::Mixture => self.world.code_len,
            DataSource::Planted => self.data.planted.code_len,
        }
    }

    pub fn kmeans_config(&self) -> KMeansConfig {
        KMeansConfig {
            k: self.estimation.k.unwrap_or_else(|| self.true_classes()),
            max_iters: self.estimation.max_iters,
            seed: self.seed(seeds::stream::KMEANS),
            init: self.estimation.init,
        }
    }

    pub fn schedule(&self) -> Result<DiffusionSchedule> {
        self.schedule.build()
    }

    /// Attack config with its seed resolved against the master seed.
    pub fn resolved_attack(&self) -> AttackConfig {
        AttackConfig {
            seed: seeds::derive(self.master_seed, "attack", self.attack.seed),
            ..self.attack.clone()
        }
    }

    pub fn seed(&self, stream: &str) -> u64 {
        seeds::derive(self.master_seed, stream, 0)
    }

    /// SHA-256 of the canonical JSON form (sorted keys, no output_dir).
    pub fn digest(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Value::Object(map) = &mut v {
            map.remove("output_dir");
        }
        let canonical = serde_json::to_string(&v).expect("value serializes");
        Sha256::digest(canonical.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// Sets `key` (dotted) in `value`; every segment must already exist.
pub fn set_path(value: &mut Value, key: &str, new: Value) -> Result<()> {
    if key.is_empty() {
        return Err(config_err("empty config key"));
    }
    let mut slot = value;
    for part in key.split('.') {
        slot = slot
            .as_object_mut()
            .and_then(|m| m.get_mut(part))
            .ok_or_else(|| config_err(format!("unknown config key `{key}`")))?;
    }
    *slot = new;
    Ok(())
}
