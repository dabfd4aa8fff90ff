use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use hsdrive_core::hypercube::write_atomic;
use hsdrive_core::Result;
use serde::Serialize;

/// Record of one subcommand run, written next to its outputs.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub tool_version: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub wall_time_ms: f64,
    #[serde(skip)]
    started: Option<Instant>,
}

impl RunManifest {
    pub fn start(subcommand: &str) -> Self {
        Self {
            subcommand: subcommand.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: None,
            config: serde_json::Value::Null,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            wall_time_ms: 0.0,
            started: Some(Instant::now()),
        }
    }

    pub fn config(&mut self, value: &impl Serialize) {
        self.config = serde_json::to_value(value).unwrap_or(serde_json::Value::Null);
    }

    pub fn input(&mut self, name: &str, path: &Path) {
        self.inputs.insert(name.into(), path.display().to_string());
    }

    pub fn output(&mut self, name: &str, path: &Path) {
        self.outputs.insert(name.into(), path.display().to_string());
    }

    /// Stamps the wall time and writes `<primary>.manifest.json`.
    pub fn finish(mut self, primary: &Path) -> Result<PathBuf> {
        if let Some(t) = self.started.take() {
            self.wall_time_ms = t.elapsed().as_secs_f64() * 1e3;
        }
        let path = manifest_path(primary);
        let json = serde_json::to_vec_pretty(&self).expect("manifest serializes");
        write_atomic(&path, &json)?;
        Ok(path)
    }
}

pub fn manifest_path(primary: &Path) -> PathBuf {
    let mut name = primary.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    primary.with_file_name(name)
}
