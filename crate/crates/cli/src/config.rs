//! Run configuration: one JSON document plus dotted `key=value` overrides.

use std::path::Path;

use sadmil::{Error, SweepConfig, SynthConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: SynthConfig,
    pub train: TrainConfig,
    /// Train, validation and test fractions.
    pub split: [f64; 3],
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: SynthConfig::default(),
            train: TrainConfig::default(),
            split: [0.6, 0.2, 0.2],
            sweep: SweepConfig::default(),
        }
    }
}

impl RunConfig {
    /// Reads `path` (if any), applies `overrides` in order and validates.
    pub fn resolve(path: Option<&Path>, overrides: &[String]) -> Result<Self, Error> {
        let mut doc = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    Error::config("--config", format!("cannot read {}: {e}", p.display()))
                })?;
                let parsed: RunConfig = serde_json::from_str(&text)
                    .map_err(|e| Error::config("--config", e.to_string()))?;
                serde_json::to_value(parsed)?
            }
            None => serde_json::to_value(RunConfig::default())?,
        };
        for item in overrides {
            apply_override(&mut doc, item)?;
        }
        let cfg: RunConfig =
            serde_json::from_value(doc).map_err(|e| Error::config("--set", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), Error> {
        self.data.validate()?;
        self.train.validate()?;
        self.sweep.validate()?;
        if self.split.iter().any(|f| !(f.is_finite() && *f >= 0.0))
            || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::config(
                "split",
                "fractions must be non-negative and sum to 1",
            ));
        }
        Ok(())
    }

    pub fn write_echo(&self, dir: &Path) -> Result<(), Error> {
        std::fs::create_dir_all(dir)?;
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(dir.join("config.json"), text + "\n")?;
        Ok(())
    }
}

/// Sets `a.b.c=value` in `doc`. Every path segment must already exist, so
/// misspelled keys are rejected. The value is parsed as JSON, falling back to
/// a plain string.
fn apply_override(doc: &mut Value, item: &str) -> Result<(), Error> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| Error::config(item, "expected key=value"))?;
    let mut node = doc;
    for part in key.split('.') {
        node = match node {
            Value::Object(map) => map.get_mut(part),
            Value::Array(items) => part.parse::<usize>().ok().and_then(|i| items.get_mut(i)),
            _ => None,
        }
        .ok_or_else(|| Error::config(key, "unknown key"))?;
    }
    *node = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok(())
}
