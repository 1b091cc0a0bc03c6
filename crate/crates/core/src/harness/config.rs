//! Experiment configuration, read from TOML. Every field has a default, so
//! an empty file is a runnable experiment.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::federation::{LocalTrainingConfig, StrategyKind};
use crate::model::{EncoderKind, NetworkSpec, DEFAULT_PROJECTION_DIM};

/// Overrides `output_dir` when set.
pub const OUTPUT_DIR_ENV: &str = "FEDPROC_OUTPUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub strategy: StrategyKind,
    pub seed: u64,
    /// T
    pub rounds: usize,
    /// E
    pub local_epochs: usize,
    /// B
    pub batch_size: usize,
    /// m
    pub num_clients: usize,
    /// η
    pub learning_rate: f64,
    /// Dirichlet concentration β.
    pub beta: f64,
    /// Fraction γ of clients sampled per round.
    pub sample_rate: f64,
    pub output_dir: PathBuf,
    /// Train sampled clients on the rayon pool.
    pub parallel: bool,
    /// Write a parameter checkpoint after every round.
    pub checkpoints: bool,
    /// Debug: fixes the FedProc blend weight instead of `1 − t/T`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_override: Option<f64>,
    pub network: NetworkConfig,
    pub dataset: DatasetConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            strategy: StrategyKind::FedProc,
            seed: 0,
            rounds: 100,
            local_epochs: 10,
            batch_size: 64,
            num_clients: 10,
            learning_rate: 0.01,
            beta: 0.5,
            sample_rate: 1.0,
            output_dir: PathBuf::from("runs/default"),
            parallel: true,
            checkpoints: false,
            alpha_override: None,
            network: NetworkConfig::default(),
            dataset: DatasetConfig::default(),
        }
    }
}

/// Network architecture; input shape and class count come from the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub encoder: EncoderKind,
    pub hidden_dims: Vec<usize>,
    pub projection_dim: usize,
    pub conv_channels: [usize; 2],
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            encoder: EncoderKind::Mlp,
            hidden_dims: vec![64],
            projection_dim: DEFAULT_PROJECTION_DIM,
            conv_channels: [6, 16],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    Blobs {
        #[serde(default = "defaults::classes")]
        classes: usize,
        #[serde(default = "defaults::dim")]
        dim: usize,
        #[serde(default = "defaults::per_class")]
        per_class: usize,
        #[serde(default = "defaults::spread")]
        spread: f64,
        /// Share of each class held out as the server's test set.
        #[serde(default = "defaults::test_fraction")]
        test_fraction: f64,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
}

mod defaults {
    pub fn classes() -> usize {
        10
    }
    pub fn dim() -> usize {
        32
    }
    pub fn per_class() -> usize {
        100
    }
    pub fn spread() -> f64 {
        0.35
    }
    pub fn test_fraction() -> f64 {
        0.2
    }
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig::Blobs {
            classes: defaults::classes(),
            dim: defaults::dim(),
            per_class: defaults::per_class(),
            spread: defaults::spread(),
            test_fraction: defaults::test_fraction(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        Self::from_table(table)
    }

    fn from_table(table: toml::Table) -> Result<Self> {
        let cfg: ExperimentConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        Ok(cfg)
    }

    /// Reads `path`, applies `key=value` overrides (dotted keys reach into
    /// sections; values are TOML literals, bare words are strings).
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut table: toml::Table = text
            .parse()
            .map_err(|e| Error::Config(format!("invalid config {}: {e}", path.display())))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg = Self::from_table(table)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// The output directory after applying [`OUTPUT_DIR_ENV`].
    pub fn resolved_output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_DIR_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self.output_dir.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("rounds", self.rounds),
            ("local_epochs", self.local_epochs),
            ("batch_size", self.batch_size),
            ("num_clients", self.num_clients),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(Error::Config(format!("beta must be positive, got {}", self.beta)));
        }
        if !(self.sample_rate > 0.0 && self.sample_rate <= 1.0) {
            return Err(Error::Config(format!(
                "sample_rate must be in (0, 1], got {}",
                self.sample_rate
            )));
        }
        if self.network.projection_dim == 0 || self.network.hidden_dims.contains(&0) {
            return Err(Error::Config("network dimensions must be positive".into()));
        }
        if let DatasetConfig::Blobs {
            classes,
            dim,
            per_class,
            spread,
            test_fraction,
        } = &self.dataset
        {
            if *classes < 2 || *dim < *classes || *per_class == 0 {
                return Err(Error::Config(format!(
                    "blobs need classes >= 2, dim >= classes and per_class >= 1 (got {classes}, {dim}, {per_class})"
                )));
            }
            if !(spread.is_finite() && *spread >= 0.0) {
                return Err(Error::Config(format!("spread must be non-negative, got {spread}")));
            }
            if !(*test_fraction > 0.0 && *test_fraction < 1.0) {
                return Err(Error::Config(format!(
                    "test_fraction must be in (0, 1), got {test_fraction}"
                )));
            }
        }
        self.local_training().validate()
    }

    pub fn local_training(&self) -> LocalTrainingConfig {
        LocalTrainingConfig {
            strategy: self.strategy,
            epochs: self.local_epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            total_rounds: self.rounds,
            alpha_override: self.alpha_override,
            seed: self.seed,
        }
    }

    /// Network spec for data with the given per-sample shape and class count.
    pub fn network_spec(&self, sample_shape: &[usize], num_classes: usize) -> NetworkSpec {
        let input_shape = match self.network.encoder {
            EncoderKind::Mlp => vec![sample_shape.iter().product()],
            EncoderKind::SmallCnn => sample_shape.to_vec(),
        };
        NetworkSpec {
            encoder: self.network.encoder,
            input_shape,
            hidden_dims: self.network.hidden_dims.clone(),
            projection_dim: self.network.projection_dim,
            num_classes,
            conv_channels: self.network.conv_channels,
        }
    }
}

/// Applies one `dotted.key=value` override to a parsed config table.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {spec:?} is not key=value")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(Error::Config(format!("override {spec:?} has an empty key")));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));

    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().unwrap();
    let mut cursor = table;
    for part in parts {
        let entry = cursor
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cursor = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override key {key:?}: {part:?} is not a section")))?;
    }
    cursor.insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_uses_table_defaults() {
        let cfg = ExperimentConfig::from_toml_str("").unwrap();
        assert_eq!(cfg.batch_size, 64);
        assert_eq!(cfg.num_clients, 10);
        assert_eq!(cfg.rounds, 100);
        assert_eq!(cfg.local_epochs, 10);
        assert_eq!(cfg.beta, 0.5);
        assert_eq!(cfg.sample_rate, 1.0);
        assert_eq!(cfg.network.projection_dim, 256);
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn sections_and_overrides() {
        let mut table: toml::Table = r#"
            strategy = "fedavg"
            [network]
            hidden_dims = [16, 8]
            [dataset]
            kind = "blobs"
            classes = 4
        "#
        .parse()
        .unwrap();
        apply_override(&mut table, "network.projection_dim=32").unwrap();
        apply_override(&mut table, "strategy=solo").unwrap();
        apply_override(&mut table, "beta = 0.1").unwrap();
        let cfg = ExperimentConfig::from_table(table).unwrap();
        assert_eq!(cfg.strategy, StrategyKind::Solo);
        assert_eq!(cfg.network.projection_dim, 32);
        assert_eq!(cfg.network.hidden_dims, vec![16, 8]);
        assert_eq!(cfg.beta, 0.1);
        assert!(matches!(
            cfg.dataset,
            DatasetConfig::Blobs {
                classes: 4,
                dim: 32,
                ..
            }
        ));
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(ExperimentConfig::from_toml_str("roundz = 3").is_err());
        let bad = ExperimentConfig::from_toml_str("sample_rate = 0.0").unwrap();
        assert!(bad.validate().is_err());
        let bad = ExperimentConfig::from_toml_str("learning_rate = -0.1").unwrap();
        assert!(bad.validate().is_err());
        let mut t = toml::Table::new();
        assert!(apply_override(&mut t, "novalue").is_err());
    }

    #[test]
    fn serialized_config_round_trips() {
        let cfg = ExperimentConfig {
            alpha_override: Some(0.0),
            ..ExperimentConfig::default()
        };
        assert_eq!(ExperimentConfig::from_toml_str(&cfg.to_toml_string()).unwrap(), cfg);
    }
}
