//! Runtime configuration, loadable from TOML.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use bmaguard_core::phash::CHANGE_THRESHOLD;
use bmaguard_core::pipeline::{SCAN_INTERVAL, WHITELIST_CUTOFF};

pub const DEFAULT_BIND: &str = "127.0.0.1:8765";
pub const LOG_FLUSH_INTERVAL: Duration = Duration::from_secs(120);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub whitelist: Option<PathBuf>,
    pub model: Option<PathBuf>,
    /// Overrides the vocabulary stored next to the checkpoint.
    pub vocab: Option<PathBuf>,
    pub scan_interval_secs: f64,
    pub hamming_threshold: u32,
    pub whitelist_cutoff: u32,
    pub bind: SocketAddr,
    pub log_flush_secs: f64,
    pub log_dir: PathBuf,
    /// Keep normalized screenshots for the review UI.
    pub retain_screenshots: bool,
    pub max_screenshots: usize,
    /// OCR executable run once per strip; `tesseract` when unset.
    pub ocr_command: Option<PathBuf>,
    pub ocr_args: Vec<String>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            whitelist: None,
            model: None,
            vocab: None,
            scan_interval_secs: SCAN_INTERVAL.as_secs_f64(),
            hamming_threshold: CHANGE_THRESHOLD,
            whitelist_cutoff: WHITELIST_CUTOFF,
            bind: DEFAULT_BIND.parse().expect("default bind address"),
            log_flush_secs: LOG_FLUSH_INTERVAL.as_secs_f64(),
            log_dir: PathBuf::from("logs"),
            retain_screenshots: false,
            max_screenshots: 256,
            ocr_command: None,
            ocr_args: Vec::new(),
        }
    }
}

impl Config {
    pub fn validate(&self) -> Result<()> {
        if !(self.scan_interval_secs > 0.0 && self.scan_interval_secs.is_finite()) {
            bail!("scan_interval_secs must be positive");
        }
        if !(self.log_flush_secs > 0.0 && self.log_flush_secs.is_finite()) {
            bail!("log_flush_secs must be positive");
        }
        if self.hamming_threshold > 64 {
            bail!("hamming_threshold must be in [0, 64]");
        }
        if self.whitelist_cutoff == 0 {
            bail!("whitelist_cutoff must be positive");
        }
        Ok(())
    }

    pub fn parse(input: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(input).context("invalid configuration")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&s).with_context(|| format!("in {}", path.display()))
    }

    pub fn scan_interval(&self) -> Duration {
        Duration::from_secs_f64(self.scan_interval_secs)
    }

    pub fn log_flush_interval(&self) -> Duration {
        Duration::from_secs_f64(self.log_flush_secs)
    }
}
