use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

pub const MANIFEST_FILE: &str = "manifest.toml";

/// Record of one invocation, written next to its outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub version: String,
    pub seed: u64,
    pub wall_clock_seconds: f64,
    pub similarity_evaluations: u64,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    /// Every option after defaults are applied.
    pub config: toml::Table,
    pub results: toml::Table,
}

impl RunManifest {
    pub fn new(subcommand: &str, seed: u64) -> Self {
        Self {
            subcommand: subcommand.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            wall_clock_seconds: 0.0,
            similarity_evaluations: 0,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            config: toml::Table::new(),
            results: toml::Table::new(),
        }
    }

    pub fn input(&mut self, key: &str, path: &Path) {
        self.inputs.insert(key.to_string(), path.display().to_string());
    }

    pub fn output(&mut self, key: &str, path: &Path) {
        self.outputs.insert(key.to_string(), path.display().to_string());
    }

    pub fn set(&mut self, key: &str, value: impl Into<toml::Value>) {
        self.config.insert(key.to_string(), value.into());
    }

    pub fn result(&mut self, key: &str, value: impl Into<toml::Value>) {
        self.results.insert(key.to_string(), value.into());
    }

    /// Serializes `value` into a config entry.
    pub fn set_serialized<T: Serialize>(&mut self, key: &str, value: &T) -> Result<()> {
        let v = toml::Value::try_from(value).with_context(|| format!("serializing `{key}`"))?;
        self.config.insert(key.to_string(), v);
        Ok(())
    }

    /// Writes `manifest.toml` into an output directory.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        self.write_to(&dir.join(MANIFEST_FILE))
    }

    /// Writes `<file>.manifest.toml` beside a single output file.
    pub fn write_beside(&self, file: &Path) -> Result<PathBuf> {
        let mut name = file.file_name().unwrap_or_default().to_os_string();
        name.push(".manifest.toml");
        self.write_to(&file.with_file_name(name))
    }

    fn write_to(&self, path: &Path) -> Result<PathBuf> {
        let path = path.to_path_buf();
        let text = toml::to_string(self).context("serializing manifest")?;
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
