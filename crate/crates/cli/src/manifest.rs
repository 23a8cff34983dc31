use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;

/// Record of one invocation, written next to its outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: &'static str,
    pub params: serde_json::Value,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub failures: Vec<String>,
    pub timings_ms: BTreeMap<String, f64>,
    #[serde(skip)]
    started: Instant,
}

impl RunManifest {
    pub fn new(command: &str, params: &impl Serialize) -> Result<Self> {
        Ok(RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION"),
            params: serde_json::to_value(params).context("serializing parameters")?,
            inputs: Vec::new(),
            outputs: Vec::new(),
            failures: Vec::new(),
            timings_ms: BTreeMap::new(),
            started: Instant::now(),
        })
    }

    pub fn time<T>(&mut self, label: &str, f: impl FnOnce() -> T) -> T {
        let t0 = Instant::now();
        let out = f();
        self.timings_ms
            .insert(label.to_string(), t0.elapsed().as_secs_f64() * 1e3);
        out
    }

    /// Writes the manifest to `path` as pretty JSON.
    pub fn write(mut self, path: &Path) -> Result<()> {
        self.timings_ms
            .insert("total".into(), self.started.elapsed().as_secs_f64() * 1e3);
        let text = serde_json::to_string_pretty(&self)?;
        fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }
}

/// `dir/manifest.json` for directory outputs, `file.manifest.json` for
/// file outputs.
pub fn manifest_path(out: &Path) -> PathBuf {
    if out.is_dir() {
        out.join("manifest.json")
    } else {
        let mut name = out.file_name().unwrap_or_default().to_os_string();
        name.push(".manifest.json");
        out.with_file_name(name)
    }
}
