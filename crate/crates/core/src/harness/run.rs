//! Run directories and manifests.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::Result;

pub const MANIFEST: &str = "manifest.json";

/// Hex SHA-256 prefix of the canonical JSON form of a config.
pub fn config_hash(config: &Value) -> String {
    let digest = Sha256::digest(config.to_string().as_bytes());
    digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
}

/// One invocation's output directory, named `<unix-seconds>-<config-hash>`.
pub struct RunDir {
    path: PathBuf,
    command: &'static str,
    config: Value,
    hash: String,
    started: Instant,
    seeds: Value,
    outputs: Vec<String>,
    warnings: Vec<String>,
}

impl RunDir {
    pub fn create(root: &Path, command: &'static str, config: &impl Serialize) -> Result<Self> {
        let config = serde_json::to_value(config)?;
        let hash = config_hash(&config);
        let secs = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        std::fs::create_dir_all(root)?;
        let base = format!("{secs}-{hash}");
        let mut path = root.join(&base);
        let mut k = 1;
        while path.exists() {
            k += 1;
            path = root.join(format!("{base}-{k}"));
        }
        std::fs::create_dir(&path)?;
        Ok(Self {
            path,
            command,
            config,
            hash,
            started: Instant::now(),
            seeds: json!({}),
            outputs: Vec::new(),
            warnings: Vec::new(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn set_seeds(&mut self, seeds: Value) {
        self.seeds = seeds;
    }

    pub fn warn(&mut self, msg: impl Into<String>) {
        self.warnings.push(msg.into());
    }

    /// Path for a new output file, recorded in the manifest.
    pub fn output(&mut self, name: &str) -> Result<PathBuf> {
        let p = self.path.join(name);
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent)?;
        }
        self.outputs.push(name.to_string());
        Ok(p)
    }

    pub fn write_json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        let p = self.output(name)?;
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        std::fs::write(p, text)?;
        Ok(())
    }

    /// Writes `manifest.json` and returns the run directory.
    pub fn finish(self, jobs: usize) -> Result<PathBuf> {
        let manifest = json!({
            "tool": env!("CARGO_PKG_NAME"),
            "version": env!("CARGO_PKG_VERSION"),
            "command": self.command,
            "config": self.config,
            "config_hash": self.hash,
            "seeds": self.seeds,
            "jobs": jobs,
            "outputs": self.outputs,
            "warnings": self.warnings,
            "timings": { "total_seconds": self.started.elapsed().as_secs_f64() },
        });
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        std::fs::write(self.path.join(MANIFEST), text)?;
        Ok(self.path)
    }
}
