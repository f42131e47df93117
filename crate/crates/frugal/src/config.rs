//! Run configuration and the flat key/value config file.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Seeds and optimization hyperparameters for a reproducible run.
///
/// Two runs with identical `RunConfig` and identical inputs produce
/// bit-identical outputs at every pipeline stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_fraction: f64,
    pub epochs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            batch_size: 32,
            learning_rate: 3e-5,
            warmup_fraction: 0.06,
            epochs: 3,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return Err(Error::Config("warmup_fraction must be in [0,1]".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        Ok(())
    }

    /// Apply `key = value` pairs parsed from a config file.
    pub fn apply(&mut self, kv: &BTreeMap<String, String>) -> Result<()> {
        for (key, value) in kv {
            match key.as_str() {
                "seed" => self.seed = parse(key, value)?,
                "batch_size" => self.batch_size = parse(key, value)?,
                "learning_rate" => self.learning_rate = parse(key, value)?,
                "warmup_fraction" => self.warmup_fraction = parse(key, value)?,
                "epochs" => self.epochs = parse(key, value)?,
                other => {
                    return Err(Error::Config(format!("unknown config key {other:?}")));
                }
            }
        }
        self.validate()
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply(&parse_config_file(path)?)?;
        Ok(cfg)
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for key {key:?}")))
}

/// Parse a flat `key = value` UTF-8 config file. Blank lines and lines
/// starting with `#` are ignored.
pub fn parse_config_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    let mut out = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!(
                "{}:{}: expected `key = value`",
                path.display(),
                lineno + 1
            ))
        })?;
        out.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(out)
}
