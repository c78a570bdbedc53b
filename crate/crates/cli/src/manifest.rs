//! Run manifests: resolved parameters and output inventory per invocation.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

/// Written atomically next to a command's outputs. Re-running the command
/// with the manifest as its config reproduces the outputs (wall-clock
/// timestamps and timing columns aside).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: String,
    pub resolved_config: serde_json::Value,
    pub seed: u64,
    pub tool_version: String,
    pub outputs: Vec<String>,
    pub started: String,
    pub finished: String,
}

impl RunManifest {
    pub fn begin(command: &str, config_path: &Path) -> ManifestBuilder {
        ManifestBuilder {
            command: command.to_string(),
            config_path: config_path.display().to_string(),
            started: chrono::Utc::now().to_rfc3339(),
            outputs: Vec::new(),
        }
    }
}

pub struct ManifestBuilder {
    command: String,
    config_path: String,
    started: String,
    outputs: Vec<PathBuf>,
}

impl ManifestBuilder {
    pub fn record_output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    /// Serializes the resolved config and writes the manifest at `path`.
    pub fn finish_at<T: Serialize>(self, path: &Path, config: &T, seed: u64) -> Result<PathBuf> {
        let manifest = RunManifest {
            command: self.command,
            config_path: self.config_path,
            resolved_config: serde_json::to_value(config).context("serialize resolved config")?,
            seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            outputs: self
                .outputs
                .iter()
                .map(|p| p.display().to_string())
                .collect(),
            started: self.started,
            finished: chrono::Utc::now().to_rfc3339(),
        };
        let text = serde_json::to_string_pretty(&manifest).context("serialize manifest")?;
        ntkrisk::io::write_atomic(path, text.as_bytes()).context("write manifest")?;
        Ok(path.to_path_buf())
    }

    /// Directory-owning commands write `manifest.json` inside their dir.
    pub fn finish<T: Serialize>(self, dir: &Path, config: &T, seed: u64) -> Result<PathBuf> {
        let path = dir.join("manifest.json");
        self.finish_at(&path, config, seed)
    }

    /// File-producing commands write `<output>.manifest.json` alongside the
    /// artifact, so that runs sharing a directory do not clobber each other.
    pub fn finish_for_output<T: Serialize>(
        self,
        output: &Path,
        config: &T,
        seed: u64,
    ) -> Result<PathBuf> {
        let mut os = output.as_os_str().to_owned();
        os.push(".manifest.json");
        self.finish_at(&PathBuf::from(os), config, seed)
    }
}
