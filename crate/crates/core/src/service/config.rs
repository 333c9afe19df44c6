use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ServeError;
use crate::engine::{EngineConfig, DEFAULT_DELAY_GRACE_S, DEFAULT_PRESENCE_TIMEOUT_S};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReaderLink {
    pub data_point_id: String,
    pub work_center_id: String,
    /// host:port of the LLRP reader serving this data point
    pub reader_endpoint: String,
}

/// Where the engine's notion of "now" comes from between reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClockSource {
    /// system time, ticked every `tick_interval_ms`
    #[default]
    Wall,
    /// the embedding program calls `EngineHandle::tick`
    External,
}

fn default_presence() -> u64 {
    DEFAULT_PRESENCE_TIMEOUT_S
}
fn default_grace() -> u64 {
    DEFAULT_DELAY_GRACE_S
}
fn default_tick() -> u64 {
    1000
}
fn default_backoff_initial() -> u64 {
    200
}
fn default_backoff_max() -> u64 {
    5000
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    pub api_listen: String,
    pub data_points: Vec<ReaderLink>,
    pub exit_data_point_id: String,
    #[serde(default = "default_presence")]
    pub presence_timeout_s: u64,
    #[serde(default = "default_grace")]
    pub delay_grace_s: u64,
    #[serde(default)]
    pub log_path: Option<PathBuf>,
    /// station UI assets served under /ui/
    #[serde(default)]
    pub ui_dir: Option<PathBuf>,
    /// dispatch list imported at start-up (pull mode)
    #[serde(default)]
    pub dispatch_file: Option<PathBuf>,
    #[serde(default)]
    pub clock: ClockSource,
    #[serde(default = "default_tick")]
    pub tick_interval_ms: u64,
    #[serde(default = "default_backoff_initial")]
    pub reconnect_initial_ms: u64,
    #[serde(default = "default_backoff_max")]
    pub reconnect_max_ms: u64,
}

impl ServiceConfig {
    pub fn parse(text: &str) -> Result<Self, ServeError> {
        let cfg: ServiceConfig = serde_json::from_str(text)
            .map_err(|e| ServeError::Config(format!("line {}, column {}: {e}", e.line(), e.column())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config file; relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ServeError> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| ServeError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text).map_err(|e| match e {
            ServeError::Config(m) => ServeError::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.log_path, &mut cfg.ui_dir, &mut cfg.dispatch_file].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ServeError> {
        let mut seen = HashSet::new();
        for dp in &self.data_points {
            if !seen.insert(dp.data_point_id.as_str()) {
                return Err(ServeError::Config(format!("data point {} listed twice", dp.data_point_id)));
            }
        }
        if self.tick_interval_ms == 0 {
            return Err(ServeError::Config("tick_interval_ms must be positive".into()));
        }
        if self.reconnect_initial_ms == 0 || self.reconnect_max_ms < self.reconnect_initial_ms {
            return Err(ServeError::Config("reconnect backoff must satisfy 0 < initial <= max".into()));
        }
        self.engine_config().validate().map_err(ServeError::Config)
    }

    pub fn engine_config(&self) -> EngineConfig {
        EngineConfig::new(
            self.exit_data_point_id.clone(),
            self.data_points.iter().map(|d| (d.data_point_id.clone(), d.work_center_id.clone())),
        )
        .with_presence_timeout_s(self.presence_timeout_s)
        .with_delay_grace_s(self.delay_grace_s)
    }
}
