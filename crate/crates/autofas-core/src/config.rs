//! Versioned, human-editable run configuration: TOML sections for the
//! dataset, teacher, supernet, and search settings, plus artifact paths.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::DatasetSpec;
use crate::error::{Error, Result};
use crate::search::SearchConfig;
use crate::supernet::SupernetConfig;
use crate::teacher::TeacherConfig;

pub const CONFIG_VERSION: u32 = 1;

/// Marker for a machine-independent FLOP-proxy latency table.
pub const SYNTHETIC_TABLE: &str = "synthetic";

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    /// Where artifacts land; overridable by the CLI.
    pub output_dir: PathBuf,
    /// Base path of an existing dataset (its `.features.tsv` / `.examples.tsv`
    /// pair); when absent, `dataset` is generated in the output dir.
    #[serde(default)]
    pub dataset_path: Option<PathBuf>,
    /// Path to a profiled latency table file, or `synthetic`.
    #[serde(default = "default_table")]
    pub latency_table: String,
    #[serde(default)]
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub teacher: TeacherConfig,
    #[serde(default)]
    pub supernet: SupernetConfig,
    #[serde(default)]
    pub search: SearchConfig,
}

fn default_table() -> String {
    SYNTHETIC_TABLE.into()
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            version: CONFIG_VERSION,
            output_dir: PathBuf::from("out"),
            dataset_path: None,
            latency_table: default_table(),
            dataset: DatasetSpec::default(),
            teacher: TeacherConfig::default(),
            supernet: SupernetConfig::default(),
            search: SearchConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        self.dataset.validate()?;
        self.search.validate()?;
        self.supernet.validate()?;
        Ok(())
    }
}

pub fn load_run_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path)?;
    let cfg: RunConfig =
        toml::from_str(&text).map_err(|e| Error::Config(format!("config parse: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn save_run_config(path: &Path, cfg: &RunConfig) -> Result<()> {
    let s = toml::to_string(cfg).map_err(|e| Error::Config(format!("config serialize: {e}")))?;
    fs::write(path, s)?;
    Ok(())
}
