//! Server configuration: one JSON file, flags override, nothing read from
//! the environment.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;
use sp2p_core::DEFAULT_MAX_FRAME;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerConfig {
    pub listen_addr: String,
    pub artifact_dir: PathBuf,
    pub manifest_path: PathBuf,
    pub audit_log_path: PathBuf,
    #[serde(default = "default_ttl")]
    pub program_ttl_seconds: u32,
    #[serde(default = "default_freshness")]
    pub pass_freshness_seconds: u64,
    #[serde(default = "default_max_frame")]
    pub max_frame_bytes: usize,
}

fn default_ttl() -> u32 {
    60
}

fn default_freshness() -> u64 {
    3600
}

fn default_max_frame() -> usize {
    DEFAULT_MAX_FRAME
}

impl ServerConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        serde_json::from_str(&text)
            .with_context(|| format!("cannot parse config {}", path.display()))
    }

    /// Everything the server needs must be in place before it binds.
    pub fn validate(&self) -> Result<()> {
        if self.program_ttl_seconds == 0 {
            bail!("program_ttl_seconds must be positive");
        }
        if self.pass_freshness_seconds == 0 {
            bail!("pass_freshness_seconds must be positive");
        }
        if self.max_frame_bytes == 0 {
            bail!("max_frame_bytes must be positive");
        }
        if !self.artifact_dir.is_dir() {
            bail!("artifact_dir {} is not a directory", self.artifact_dir.display());
        }
        if !self.manifest_path.is_file() {
            bail!("manifest_path {} is not a file", self.manifest_path.display());
        }
        // The log itself may not exist yet; its home must.
        let log_dir = match self.audit_log_path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        if !log_dir.is_dir() {
            bail!(
                "audit log directory {} does not exist",
                log_dir.display()
            );
        }
        Ok(())
    }
}
