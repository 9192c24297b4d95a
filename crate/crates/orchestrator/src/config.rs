//! The orchestrator's JSON configuration file.

use std::collections::BTreeSet;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use labmcp_protocol::{TransportConfig, TransportKind};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_BIND: &str = "127.0.0.1:8080";
pub const DEFAULT_DECISION_ALIAS: &str = "nimo";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerEntry {
    pub alias: String,
    pub transport: TransportConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrchestratorConfig {
    #[serde(default)]
    pub servers: Vec<ServerEntry>,
    #[serde(default = "default_bind")]
    pub bind: SocketAddr,
    #[serde(default = "default_decision_alias")]
    pub decision_alias: String,
    /// Start an in-process decision server under `decision_alias` unless one
    /// is configured explicitly.
    #[serde(default = "yes")]
    pub auto_decision_server: bool,
    #[serde(default = "default_data_dir")]
    pub data_dir: PathBuf,
}

fn default_bind() -> SocketAddr {
    DEFAULT_BIND.parse().expect("default bind address parses")
}

fn default_decision_alias() -> String {
    DEFAULT_DECISION_ALIAS.into()
}

fn yes() -> bool {
    true
}

fn default_data_dir() -> PathBuf {
    PathBuf::from("labmcp-data")
}

impl Default for OrchestratorConfig {
    fn default() -> Self {
        Self {
            servers: Vec::new(),
            bind: default_bind(),
            decision_alias: default_decision_alias(),
            auto_decision_server: true,
            data_dir: default_data_dir(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config is not valid: {0}")]
    Parse(String),
    #[error("server alias {0:?} is configured twice")]
    DuplicateAlias(String),
    #[error("decision alias is empty")]
    EmptyDecisionAlias,
}

impl OrchestratorConfig {
    pub fn from_json_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file. A relative `data_dir`, and a relative stdio
    /// command containing a path separator, are taken relative to the file's
    /// directory. Bare command names are looked up on PATH.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_owned(),
            source,
        })?;
        let mut cfg = Self::from_json_str(&text)?;
        let dir = path.parent().unwrap_or(Path::new(""));
        if cfg.data_dir.is_relative() {
            cfg.data_dir = dir.join(&cfg.data_dir);
        }
        for s in &mut cfg.servers {
            if let TransportKind::Stdio { command, .. } = &mut s.transport.kind {
                let p = Path::new(command.as_str());
                if p.is_relative() && p.components().count() > 1 {
                    *command = dir.join(p).to_string_lossy().into_owned();
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut seen = BTreeSet::new();
        for s in &self.servers {
            if !seen.insert(s.alias.as_str()) {
                return Err(ConfigError::DuplicateAlias(s.alias.clone()));
            }
        }
        if self.decision_alias.trim().is_empty() {
            return Err(ConfigError::EmptyDecisionAlias);
        }
        Ok(())
    }

    /// Whether the service must supply the decision server itself.
    pub fn needs_builtin_decision_server(&self) -> bool {
        self.auto_decision_server && !self.servers.iter().any(|s| s.alias == self.decision_alias)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_apply() {
        let cfg = OrchestratorConfig::from_json_str("{}").unwrap();
        assert_eq!(cfg, OrchestratorConfig::default());
        assert!(cfg.needs_builtin_decision_server());
    }

    #[test]
    fn configured_decision_server_wins() {
        let cfg = OrchestratorConfig::from_json_str(
            r#"{"servers":[{"alias":"nimo","transport":{"kind":"stdio","command":"decision-server"}}]}"#,
        )
        .unwrap();
        assert!(!cfg.needs_builtin_decision_server());
    }

    #[test]
    fn duplicate_alias_rejected() {
        let e = OrchestratorConfig::from_json_str(
            r#"{"servers":[
                {"alias":"a","transport":{"kind":"http","url":"http://127.0.0.1:1"}},
                {"alias":"a","transport":{"kind":"http","url":"http://127.0.0.1:2"}}]}"#,
        )
        .unwrap_err();
        assert!(matches!(e, ConfigError::DuplicateAlias(a) if a == "a"));
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(
            &path,
            r#"{"data_dir":"data","servers":[
                {"alias":"a","transport":{"kind":"stdio","command":"bin/sim"}},
                {"alias":"b","transport":{"kind":"stdio","command":"simlab-server"}}]}"#,
        )
        .unwrap();
        let cfg = OrchestratorConfig::load(&path).unwrap();
        assert_eq!(cfg.data_dir, dir.path().join("data"));
        let cmd = |i: usize| match &cfg.servers[i].transport.kind {
            TransportKind::Stdio { command, .. } => command.clone(),
            _ => unreachable!(),
        };
        assert_eq!(Path::new(&cmd(0)), dir.path().join("bin/sim"));
        assert_eq!(cmd(1), "simlab-server");
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(OrchestratorConfig::from_json_str(r#"{"sevrers":[]}"#).is_err());
    }
}
