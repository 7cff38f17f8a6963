//! Run manifest: one JSON file per invocation recording what ran, with
//! which seed and configuration, over how much input, and what it wrote.
//! Contains no wall-clock values, so identical runs produce identical
//! manifests.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use serde_json::Value;

use crate::config::PipelineConfig;
use crate::{data_error, CliResult};

#[derive(Serialize)]
pub struct Manifest {
    command: &'static str,
    seed: u64,
    config_sha256: String,
    #[serde(flatten)]
    details: BTreeMap<String, Value>,
    outputs: Vec<String>,
}

impl Manifest {
    pub fn new(command: &'static str, cfg: &PipelineConfig) -> Self {
        Manifest {
            command,
            seed: cfg.seed,
            config_sha256: cfg.config_digest.clone(),
            details: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    pub fn insert<T: Serialize>(&mut self, key: &str, value: T) {
        self.details.insert(
            key.to_string(),
            serde_json::to_value(value).expect("manifest detail serializes"),
        );
    }

    pub fn add_output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    /// Writes `run_manifest.json` under the output directory.
    pub fn write(mut self, output_dir: &Path) -> CliResult<PathBuf> {
        self.outputs.sort();
        let path = output_dir.join("run_manifest.json");
        let text = serde_json::to_string_pretty(&self).expect("manifest serializes");
        fs::write(&path, text)
            .with_context(|| format!("cannot write {}", path.display()))
            .map_err(data_error)?;
        Ok(path)
    }
}
