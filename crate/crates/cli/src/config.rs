//! Run configuration: a preset, overlaid by a TOML file, overlaid by flags.

use std::path::Path;

use mfpod::{BenchmarkConfig, Error, Result};
use toml::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Preset {
    /// Full-size grid and meshes.
    Full,
    /// Coarser grid, smaller meshes and pool.
    Desk,
}

impl Preset {
    pub fn config(self) -> BenchmarkConfig {
        match self {
            Preset::Full => BenchmarkConfig::default(),
            Preset::Desk => BenchmarkConfig::desk(),
        }
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Table(b), Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Loads `path` on top of the preset. Keys missing from the file keep the
/// preset's value; unknown keys are rejected.
pub fn load(preset: Preset, path: Option<&Path>) -> Result<BenchmarkConfig> {
    let base = preset.config();
    let Some(path) = path else {
        return Ok(base);
    };
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let over: Value = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let mut merged = Value::try_from(&base).map_err(|e| Error::Config(e.to_string()))?;
    merge(&mut merged, over);
    merged
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(format!("{}: {e}", path.display())))
}

pub fn to_toml(cfg: &BenchmarkConfig) -> Result<String> {
    toml::to_string_pretty(cfg).map_err(|e| Error::Config(e.to_string()))
}
