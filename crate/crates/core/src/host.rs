//! Registry of connected MCP servers: handshake, discovery, validated call
//! routing and refresh.

use std::collections::HashMap;
use std::sync::Arc;

use labmcp_protocol::{
    open_transport, validate_args, Connection, ServerIdentity, ToolCallResult, ToolDescriptor,
    TransportConfig, TransportError, Violation,
};
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ServerStatus {
    Connecting,
    Ready,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ServerRegistration {
    pub alias: String,
    /// `None` for servers attached through an existing connection.
    pub transport: Option<TransportConfig>,
    pub status: ServerStatus,
    pub identity: Option<ServerIdentity>,
    pub error: Option<String>,
    pub tool_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToolRef {
    pub server_alias: String,
    pub tool_name: String,
    pub descriptor: ToolDescriptor,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HostError {
    #[error("server alias {0:?} is already registered")]
    DuplicateAlias(String),
    #[error("invalid alias {0:?}")]
    InvalidAlias(String),
    #[error("unknown server {0:?}")]
    UnknownServer(String),
    #[error("unknown tool {server}.{tool}")]
    UnknownTool { server: String, tool: String },
    #[error("invalid arguments for {server}.{tool}: {}", join_violations(.violations))]
    Arguments {
        server: String,
        tool: String,
        violations: Vec<Violation>,
    },
    #[error("server {alias:?} is not ready: {cause}")]
    NotReady { alias: String, cause: String },
    #[error("{alias}: {source}")]
    Transport {
        alias: String,
        source: Box<TransportError>,
    },
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

struct Entry {
    reg: ServerRegistration,
    tools: Vec<ToolDescriptor>,
    conn: Option<Connection>,
    call_lock: Arc<tokio::sync::Mutex<()>>,
}

#[derive(Default)]
struct Registry {
    order: Vec<String>,
    entries: HashMap<String, Entry>,
}

/// Shareable registry. Calls to one server are serialized; calls to distinct
/// servers run concurrently.
#[derive(Clone, Default)]
pub struct Host {
    registry: Arc<RwLock<Registry>>,
}

async fn handshake(conn: &Connection) -> Result<(ServerIdentity, Vec<ToolDescriptor>), TransportError> {
    let identity = conn.initialize().await?;
    let tools = conn.list_tools().await?;
    Ok((identity, tools))
}

impl Host {
    pub fn new() -> Self {
        Self::default()
    }

    fn reserve(&self, alias: &str, transport: Option<TransportConfig>) -> Result<(), HostError> {
        if alias.is_empty() || alias.contains(['.', '/']) || alias.chars().any(char::is_whitespace) {
            return Err(HostError::InvalidAlias(alias.to_owned()));
        }
        let mut reg = self.registry.write();
        if reg.entries.contains_key(alias) {
            return Err(HostError::DuplicateAlias(alias.to_owned()));
        }
        reg.order.push(alias.to_owned());
        reg.entries.insert(
            alias.to_owned(),
            Entry {
                reg: ServerRegistration {
                    alias: alias.to_owned(),
                    transport,
                    status: ServerStatus::Connecting,
                    identity: None,
                    error: None,
                    tool_count: 0,
                },
                tools: Vec::new(),
                conn: None,
                call_lock: Arc::new(tokio::sync::Mutex::new(())),
            },
        );
        Ok(())
    }

    fn settle(
        &self,
        alias: &str,
        outcome: Result<(Connection, ServerIdentity, Vec<ToolDescriptor>), TransportError>,
    ) -> ServerRegistration {
        let mut reg = self.registry.write();
        let entry = reg.entries.get_mut(alias).expect("reserved");
        match outcome {
            Ok((conn, identity, tools)) => {
                entry.reg.status = ServerStatus::Ready;
                entry.reg.identity = Some(identity);
                entry.reg.error = None;
                entry.reg.tool_count = tools.len();
                entry.tools = tools;
                entry.conn = Some(conn);
            }
            Err(e) => {
                tracing::warn!(alias, "server registration failed: {e}");
                entry.reg.status = ServerStatus::Failed;
                entry.reg.error = Some(e.to_string());
                entry.reg.tool_count = 0;
                entry.tools.clear();
                entry.conn = None;
            }
        }
        entry.reg.clone()
    }

    /// Connects, initializes and discovers tools. Transport failures are
    /// recorded as a failed registration rather than returned as errors.
    pub async fn register_server(
        &self,
        alias: &str,
        transport: TransportConfig,
    ) -> Result<ServerRegistration, HostError> {
        self.reserve(alias, Some(transport.clone()))?;
        let outcome = async {
            transport.validate()?;
            let conn = open_transport(&transport).await?;
            let (identity, tools) = handshake(&conn).await?;
            Ok((conn, identity, tools))
        }
        .await;
        Ok(self.settle(alias, outcome))
    }

    /// Registers a server reachable through an already open connection.
    pub async fn register_connection(
        &self,
        alias: &str,
        conn: Connection,
    ) -> Result<ServerRegistration, HostError> {
        self.reserve(alias, None)?;
        let outcome = handshake(&conn).await.map(|(i, t)| (conn, i, t));
        Ok(self.settle(alias, outcome))
    }

    /// Re-handshakes and atomically replaces the catalog. Calls already in
    /// flight keep their old connection and complete or fail on it.
    pub async fn refresh(&self, alias: &str) -> Result<ServerRegistration, HostError> {
        let (transport, existing) = {
            let reg = self.registry.read();
            let entry = reg
                .entries
                .get(alias)
                .ok_or_else(|| HostError::UnknownServer(alias.to_owned()))?;
            (entry.reg.transport.clone(), entry.conn.clone())
        };
        let outcome = async {
            let conn = match (transport, existing) {
                (Some(t), _) => open_transport(&t).await?,
                (None, Some(c)) if !c.is_closed() => c,
                (None, _) => return Err(TransportError::Closed),
            };
            let (identity, tools) = handshake(&conn).await?;
            Ok((conn, identity, tools))
        }
        .await;
        Ok(self.settle(alias, outcome))
    }

    pub fn servers(&self) -> Vec<ServerRegistration> {
        let reg = self.registry.read();
        reg.order.iter().map(|a| reg.entries[a].reg.clone()).collect()
    }

    pub fn server(&self, alias: &str) -> Option<ServerRegistration> {
        self.registry.read().entries.get(alias).map(|e| e.reg.clone())
    }

    /// Servers in registration order, tools in server-reported order. Failed
    /// servers contribute nothing.
    pub fn list_tools(&self, filter: Option<&str>) -> Result<Vec<ToolRef>, HostError> {
        let reg = self.registry.read();
        if let Some(alias) = filter {
            if !reg.entries.contains_key(alias) {
                return Err(HostError::UnknownServer(alias.to_owned()));
            }
        }
        Ok(reg
            .order
            .iter()
            .filter(|a| filter.is_none_or(|f| f == a.as_str()))
            .flat_map(|a| {
                reg.entries[a].tools.iter().map(move |d| ToolRef {
                    server_alias: a.clone(),
                    tool_name: d.name.clone(),
                    descriptor: d.clone(),
                })
            })
            .collect())
    }

    pub fn descriptor(&self, server: &str, tool: &str) -> Result<ToolDescriptor, HostError> {
        let reg = self.registry.read();
        let entry = reg
            .entries
            .get(server)
            .ok_or_else(|| HostError::UnknownServer(server.to_owned()))?;
        entry
            .tools
            .iter()
            .find(|d| d.name == tool)
            .cloned()
            .ok_or_else(|| HostError::UnknownTool {
                server: server.to_owned(),
                tool: tool.to_owned(),
            })
    }

    /// Validates `args` against the discovered schema, then calls the tool.
    /// Tool-level errors come back as `is_error` results, not `Err`.
    pub async fn call_tool(
        &self,
        server: &str,
        tool: &str,
        args: Map<String, Value>,
    ) -> Result<ToolCallResult, HostError> {
        let (conn, lock) = {
            let reg = self.registry.read();
            let entry = reg
                .entries
                .get(server)
                .ok_or_else(|| HostError::UnknownServer(server.to_owned()))?;
            let conn = match (&entry.conn, entry.reg.status) {
                (Some(c), ServerStatus::Ready) => c.clone(),
                _ => {
                    return Err(HostError::NotReady {
                        alias: server.to_owned(),
                        cause: entry
                            .reg
                            .error
                            .clone()
                            .unwrap_or_else(|| "not connected".into()),
                    })
                }
            };
            let desc = entry
                .tools
                .iter()
                .find(|d| d.name == tool)
                .ok_or_else(|| HostError::UnknownTool {
                    server: server.to_owned(),
                    tool: tool.to_owned(),
                })?;
            let args = Value::Object(args.clone());
            validate_args(&desc.input_schema, &args).map_err(|violations| HostError::Arguments {
                server: server.to_owned(),
                tool: tool.to_owned(),
                violations,
            })?;
            (conn, entry.call_lock.clone())
        };
        let _guard = lock.lock().await;
        let result = conn.call_tool(tool, Value::Object(args)).await;
        result.map_err(|source| {
            if conn.is_closed() {
                self.mark_failed(server, &conn, &source);
            }
            HostError::Transport {
                alias: server.to_owned(),
                source: Box::new(source),
            }
        })
    }

    fn mark_failed(&self, alias: &str, conn: &Connection, cause: &TransportError) {
        let mut reg = self.registry.write();
        if let Some(entry) = reg.entries.get_mut(alias) {
            let same = entry.conn.as_ref().is_some_and(|c| c.same_link(conn));
            if same {
                entry.reg.status = ServerStatus::Failed;
                entry.reg.error = Some(cause.to_string());
                entry.reg.tool_count = 0;
                entry.tools.clear();
                entry.conn = None;
            }
        }
    }
}
