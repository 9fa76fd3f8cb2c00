use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::collectors::{CollectorSpec, OortConfig, RewardConfig};
use crate::error::{Error, Result};
use crate::latent::OptConfig;
use crate::model::{Budget, ProfileGenerator};
use crate::neural::TrainConfig;
use crate::sim::{MixtureSpec, PartitionConfig, SimConfig};

/// Where the device pool comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PoolConfig {
    pub generator: ProfileGenerator,
    /// JSON file with explicit device profiles; overrides the generator.
    pub profiles: Option<PathBuf>,
}

impl Default for PoolConfig {
    fn default() -> Self {
        Self {
            generator: ProfileGenerator::default(),
            profiles: None,
        }
    }
}

/// Synthetic mixture, or CSV files with columns `f0..f{d-1},label`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub mixture: MixtureSpec,
    pub train_csv: Option<PathBuf>,
    pub validation_csv: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            mixture: MixtureSpec::default(),
            train_csv: None,
            validation_csv: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CollectionConfig {
    pub collectors: Vec<CollectorSpec>,
    /// Shuffled copies added per record before training.
    pub augment_shuffles: usize,
}

impl Default for CollectionConfig {
    fn default() -> Self {
        Self {
            collectors: CollectorSpec::default_roster(100),
            augment_shuffles: 25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GcsConfig {
    /// Draw the ascent starts from records of the same round index only.
    pub round_matched_starts: bool,
}

impl Default for GcsConfig {
    fn default() -> Self {
        Self {
            round_matched_starts: true,
        }
    }
}

/// The whole experiment, read from one TOML file. Unknown keys are errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    /// Stop a run once validation accuracy reaches this value.
    #[serde(default)]
    pub target_accuracy: Option<f64>,
    #[serde(default)]
    pub pool: PoolConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub partition: PartitionConfig,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default = "default_budget")]
    pub budget: Budget,
    #[serde(default)]
    pub collection: CollectionConfig,
    #[serde(default)]
    pub rewards: RewardConfig,
    #[serde(default)]
    pub oort: OortConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub opt: OptConfig,
    #[serde(default)]
    pub gcs: GcsConfig,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

pub fn default_budget() -> Budget {
    Budget {
        latency_budget_s: 10.0,
        energy_budget_j: 150.0,
        latency_penalty_exp: 2.0,
        energy_penalty_exp: 2.0,
    }
}

impl ExperimentConfig {
    /// Defaults everywhere except the seed.
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            out_dir: default_out_dir(),
            target_accuracy: None,
            pool: PoolConfig::default(),
            data: DataConfig::default(),
            partition: PartitionConfig::default(),
            sim: SimConfig::default(),
            budget: default_budget(),
            collection: CollectionConfig::default(),
            rewards: RewardConfig::default(),
            oort: OortConfig::default(),
            train: TrainConfig::default(),
            opt: OptConfig::default(),
            gcs: GcsConfig::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.partition.validate()?;
        self.sim.validate()?;
        self.budget.validate()?;
        self.rewards.validate()?;
        self.train.validate()?;
        self.opt.validate(self.sim.clients)?;
        if self.collection.collectors.is_empty() {
            return Err(Error::Config("collector roster is empty".into()));
        }
        let mut tags = Vec::new();
        for c in &self.collection.collectors {
            c.validate()?;
            let tag = c.tag();
            if tag == "gcs" || tags.contains(&tag) {
                return Err(Error::Config(format!("collector tag {tag:?} is reserved or repeated")));
            }
            tags.push(tag);
        }
        if let Some(t) = self.target_accuracy {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::Config(format!("target_accuracy {t} outside [0, 1]")));
            }
        }
        if self.data.train_csv.is_some() != self.data.validation_csv.is_some() {
            return Err(Error::Config("train_csv and validation_csv go together".into()));
        }
        Ok(())
    }

    /// Hash of the whole configuration except the output location, so the
    /// same experiment written to two directories is byte-identical.
    pub fn config_hash(&self) -> String {
        let mut located = self.clone();
        located.out_dir = PathBuf::new();
        digest(&[&serde_json::to_string(&located).expect("config serializes")])
    }

    /// Hash of everything that determines the record corpus.
    pub fn collect_hash(&self) -> String {
        let parts = [
            serde_json::to_string(&self.seed),
            serde_json::to_string(&self.pool),
            serde_json::to_string(&self.data),
            serde_json::to_string(&self.partition),
            serde_json::to_string(&self.sim),
            serde_json::to_string(&self.budget),
            serde_json::to_string(&self.collection.collectors),
            serde_json::to_string(&self.rewards),
            serde_json::to_string(&self.oort),
        ]
        .map(|s| s.expect("config serializes"));
        digest(&parts.iter().map(String::as_str).collect::<Vec<_>>())
    }

    /// Hash of everything that determines the trained model.
    pub fn train_hash(&self) -> String {
        let parts = [
            self.collect_hash(),
            serde_json::to_string(&self.collection.augment_shuffles).expect("serializes"),
            serde_json::to_string(&self.train).expect("serializes"),
        ];
        digest(&parts.iter().map(String::as_str).collect::<Vec<_>>())
    }
}

fn digest(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0u8]);
    }
    hex::encode(&h.finalize()[..8])
}
