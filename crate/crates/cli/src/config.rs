use std::path::{Path, PathBuf};

use evprop_core::bench::DEFAULT_BUDGET_US;
use evprop_core::cluster::DbscanConfig;
use evprop_core::eval::EvalConfig;
use evprop_core::ingest::ChunkingConfig;
use evprop_core::raster::ErosionConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Paths that may come from the config file instead of the command line.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoConfig {
    pub input: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub gt: Vec<PathBuf>,
    pub proposals: Vec<PathBuf>,
    pub dump_frames: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub chunking: ChunkingConfig,
    pub erosion: ErosionConfig,
    pub dbscan: DbscanConfig,
    pub eval: EvalConfig,
    pub seed: Option<u64>,
    pub workers: usize,
    pub budget_us: u64,
    pub repetitions: usize,
    pub io: IoConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            chunking: ChunkingConfig::default(),
            erosion: ErosionConfig::default(),
            dbscan: DbscanConfig::default(),
            eval: EvalConfig::default(),
            seed: None,
            workers: 1,
            budget_us: DEFAULT_BUDGET_US,
            repetitions: 5,
            io: IoConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
    }

    /// Prints the configuration actually in effect.
    pub fn echo(&self, command: &str) {
        let json = serde_json::to_string(self).expect("config serializes");
        eprintln!("evprop {command}: effective config {json}");
    }
}
