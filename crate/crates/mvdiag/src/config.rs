//! Tunable configuration shared by the command-line surface and the
//! offline/online pipeline, loaded from TOML with `key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::embed::EmbeddingConfig;
use crate::error::{Error, Result};
use crate::model::{Aggregator, ModelConfig};

pub const CONFIG_ENV_VAR: &str = "MVDIAG_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    /// alert embedding dimension (also the encoder input width)
    pub d: usize,
    pub hidden: usize,
    pub d_out: usize,
    pub n_layers: usize,
    /// mean, pool, or lstm
    pub aggregator: String,
    pub head_hidden: usize,
    /// node inactivation probability for augmentation
    pub p: f64,
    /// weight of the two contrastive losses in the total
    pub omega: f64,
    /// contrastive temperature
    pub tau: f64,
    /// low-frequency fraction for log alert selection
    pub k: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub min_delta: f64,
    pub seed: u64,
    /// fraction of failures (time-ordered) used for training
    pub train_fraction: f64,
    /// diagnosis window length after each injection
    pub window_ms: i64,
    pub augment_copies: usize,
    pub enable_augmentation: bool,
    pub enable_task_oriented: bool,
    pub enable_cross_modal: bool,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            d: 128,
            hidden: 64,
            d_out: 32,
            n_layers: 2,
            aggregator: "mean".into(),
            head_hidden: 64,
            p: 0.2,
            omega: 0.1,
            tau: 0.3,
            k: 0.5,
            lr: 1e-3,
            weight_decay: 1e-4,
            batch: 32,
            max_epochs: 500,
            patience: 10,
            min_delta: 1e-4,
            seed: 0,
            train_fraction: 0.8,
            window_ms: 30_000,
            augment_copies: 1,
            enable_augmentation: true,
            enable_task_oriented: true,
            enable_cross_modal: true,
        }
    }
}

/// Named sub-stream seeds so each randomized stage is independently
/// reproducible from the one root seed.
pub fn substream(seed: u64, name: &str) -> u64 {
    // FNV-1a over the name, folded with the root seed
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl Config {
    pub fn validate(&self) -> Result<()> {
        fn check(ok: bool, msg: &str) -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::Config(msg.to_string()))
            }
        }
        check(self.d > 0, "d must be positive")?;
        check(self.hidden > 0, "hidden must be positive")?;
        check(self.d_out > 0, "d_out must be positive")?;
        check(self.n_layers > 0, "n_layers must be positive")?;
        check(self.head_hidden > 0, "head_hidden must be positive")?;
        check((0.0..1.0).contains(&self.p), "p must be in [0, 1)")?;
        check(self.omega >= 0.0, "omega must be non-negative")?;
        check(self.tau > 0.0, "tau must be positive")?;
        check(self.k > 0.0 && self.k <= 1.0, "k must be in (0, 1]")?;
        check(self.lr >= 0.0, "lr must be non-negative")?;
        check(self.weight_decay >= 0.0, "weight_decay must be non-negative")?;
        check(self.batch > 0, "batch must be positive")?;
        check(self.max_epochs > 0, "max_epochs must be positive")?;
        check(
            self.train_fraction > 0.0 && self.train_fraction < 1.0,
            "train_fraction must be in (0, 1)",
        )?;
        check(self.window_ms > 0, "window_ms must be positive")?;
        self.parse_aggregator().map(|_| ())
    }

    pub fn parse_aggregator(&self) -> Result<Aggregator> {
        match self.aggregator.as_str() {
            "mean" => Ok(Aggregator::Mean),
            "pool" => Ok(Aggregator::Pool),
            "lstm" => Ok(Aggregator::Lstm),
            other => Err(Error::Config(format!(
                "aggregator must be mean, pool, or lstm, got {other}"
            ))),
        }
    }

    pub fn model_config(&self, class_count: usize) -> Result<ModelConfig> {
        Ok(ModelConfig {
            input_dim: self.d,
            hidden_dim: self.hidden,
            output_dim: self.d_out,
            n_layers: self.n_layers,
            aggregator: self.parse_aggregator()?,
            head_hidden: self.head_hidden,
            class_count,
            tau: self.tau,
            omega: self.omega,
            enable_task_oriented: self.enable_task_oriented,
            enable_cross_modal: self.enable_cross_modal,
            learning_rate: self.lr,
            weight_decay: self.weight_decay,
            batch_size: self.batch,
            max_epochs: self.max_epochs,
            patience: self.patience,
            min_delta: self.min_delta,
        })
    }

    pub fn embedding_config(&self) -> EmbeddingConfig {
        EmbeddingConfig {
            dimension: self.d,
            seed: substream(self.seed, "embedding"),
            ..Default::default()
        }
    }

    pub fn augment_config(&self) -> AugmentConfig {
        AugmentConfig {
            inactivation_probability: self.p,
            copies_per_sample: self.augment_copies,
            seed: substream(self.seed, "augment"),
        }
    }

    /// Loads a TOML file and applies `key=value` overrides, then validates.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Config> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::from_toml(&text, overrides)
    }

    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Config> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e| Error::Config(format!("invalid TOML: {e}")))?;
        for entry in overrides {
            let Some((key, value)) = entry.split_once('=') else {
                return Err(Error::Config(format!(
                    "override {entry} is not of the form key=value"
                )));
            };
            // parse the right-hand side as a TOML value; bare strings that
            // fail to parse (like aggregator names) fall back to strings
            let parsed: toml::Table = format!("v = {}", value.trim())
                .parse()
                .unwrap_or_else(|_| {
                    format!("v = {:?}", value.trim())
                        .parse()
                        .expect("quoted string always parses")
                });
            table.insert(key.trim().to_string(), parsed["v"].clone());
        }
        let config: Config = toml::Value::Table(table)
            .try_into()
            .map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    /// Explicit path, then `MVDIAG_CONFIG`, then built-in defaults.
    pub fn resolve(explicit: Option<&Path>, overrides: &[String]) -> Result<Config> {
        if let Some(path) = explicit {
            return Self::load(path, overrides);
        }
        if let Ok(env_path) = std::env::var(CONFIG_ENV_VAR) {
            return Self::load(&PathBuf::from(env_path), overrides);
        }
        Self::from_toml("", overrides)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_pinned() {
        let c = Config::default();
        c.validate().unwrap();
        assert_eq!(c.d, 128);
        assert_eq!(c.hidden, 64);
        assert_eq!(c.d_out, 32);
        assert_eq!(c.n_layers, 2);
        assert_eq!(c.p, 0.2);
        assert_eq!(c.omega, 0.1);
        assert_eq!(c.tau, 0.3);
        assert_eq!(c.k, 0.5);
        assert_eq!(c.lr, 1e-3);
        assert_eq!(c.weight_decay, 1e-4);
        assert_eq!(c.batch, 32);
        assert_eq!(c.aggregator, "mean");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = Config::from_toml("nonsense = 3", &[]);
        assert!(err.is_err());
    }

    #[test]
    fn overrides_apply_and_are_validated() {
        let c = Config::from_toml("", &["tau=0.5".into(), "aggregator=pool".into()]).unwrap();
        assert_eq!(c.tau, 0.5);
        assert_eq!(c.aggregator, "pool");
        assert!(Config::from_toml("", &["tau=-1".into()]).is_err());
        assert!(Config::from_toml("", &["tau".into()]).is_err());
    }

    #[test]
    fn file_values_survive_roundtrip() {
        let c = Config { batch: 8, seed: 42, ..Default::default() };
        let text = toml::to_string(&c).unwrap();
        let back = Config::from_toml(&text, &[]).unwrap();
        assert_eq!(c, back);
    }

    #[test]
    fn bad_aggregator_is_rejected() {
        assert!(Config::from_toml("aggregator = \"median\"", &[]).is_err());
    }

    #[test]
    fn substreams_are_stable_and_distinct() {
        assert_eq!(substream(7, "embedding"), substream(7, "embedding"));
        assert_ne!(substream(7, "embedding"), substream(7, "augment"));
        assert_ne!(substream(7, "embedding"), substream(8, "embedding"));
    }
}
