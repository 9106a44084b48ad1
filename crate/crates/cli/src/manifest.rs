use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

pub const FILE: &str = "run_manifest.json";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BuildInfo {
    pub version: String,
    pub git_rev: String,
}

impl BuildInfo {
    pub fn current() -> Self {
        Self { version: env!("CARGO_PKG_VERSION").into(), git_rev: env!("UAFUSE_GIT_REV").into() }
    }
}

/// Written to the output directory before a command does any work.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<PathBuf>,
    /// The fully resolved configuration, defaults included.
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub build: BuildInfo,
    pub output_dir: PathBuf,
    pub args: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, config_path: Option<&Path>, config: serde_json::Value, seed: Option<u64>, out: &Path) -> Self {
        Self {
            command: command.into(),
            config_path: config_path.map(Path::to_path_buf),
            config,
            seed,
            build: BuildInfo::current(),
            output_dir: out.to_path_buf(),
            args: std::env::args().collect(),
        }
    }

    /// Creates `out` if needed and writes the manifest into it.
    pub fn write(&self) -> Result<()> {
        create_dir(&self.output_dir)?;
        write_json(&self.output_dir.join(FILE), self)
    }
}

pub fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("invalid JSON in {}", path.display()))
}
