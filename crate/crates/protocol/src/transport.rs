//! Client-side connections to MCP servers over child-process stdio, HTTP, or
//! any in-memory byte stream pair.

use std::collections::{BTreeMap, HashMap};
use std::process::Stdio;
use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;
use tokio::io::{AsyncBufReadExt, AsyncRead, AsyncWrite, AsyncWriteExt, BufReader};
use tokio::process::{Child, Command};
use tokio::sync::{broadcast, oneshot};
use tokio::task::JoinHandle;

use crate::content::ToolCallResult;
use crate::message::{frame_message, parse_message, ProtocolError, RequestId, RpcError, RpcMessage};
use crate::schema::ToolDescriptor;
use crate::server::ServerIdentity;
use crate::PROTOCOL_VERSION;

pub const DEFAULT_TIMEOUT_MS: u64 = 30_000;

fn default_timeout() -> u64 {
    DEFAULT_TIMEOUT_MS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TransportKind {
    Stdio {
        command: String,
        #[serde(default)]
        args: Vec<String>,
        #[serde(default)]
        env: BTreeMap<String, String>,
    },
    Http {
        url: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportConfig {
    #[serde(flatten)]
    pub kind: TransportKind,
    #[serde(default = "default_timeout")]
    pub timeout_ms: u64,
}

impl TransportConfig {
    pub fn stdio<I, S>(command: impl Into<String>, args: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            kind: TransportKind::Stdio {
                command: command.into(),
                args: args.into_iter().map(Into::into).collect(),
                env: BTreeMap::new(),
            },
            timeout_ms: DEFAULT_TIMEOUT_MS,
        }
    }

    pub fn http(url: impl Into<String>) -> Self {
        Self {
            kind: TransportKind::Http { url: url.into() },
            timeout_ms: DEFAULT_TIMEOUT_MS,
        }
    }

    pub fn with_timeout(mut self, ms: u64) -> Self {
        self.timeout_ms = ms;
        self
    }

    pub fn validate(&self) -> Result<(), TransportError> {
        if self.timeout_ms == 0 {
            return Err(TransportError::Config("timeout must be positive".into()));
        }
        match &self.kind {
            TransportKind::Stdio { command, .. } if command.trim().is_empty() => {
                Err(TransportError::Config("stdio command is empty".into()))
            }
            TransportKind::Http { url } => reqwest::Url::parse(url)
                .map(|_| ())
                .map_err(|e| TransportError::Config(format!("bad url {url}: {e}"))),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransportError {
    #[error("invalid transport config: {0}")]
    Config(String),
    #[error("failed to spawn {command}: {reason}")]
    Spawn { command: String, reason: String },
    #[error("http transport: {0}")]
    Http(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error("request {id} timed out")]
    Timeout { id: RequestId },
    #[error("connection closed")]
    Closed,
    #[error("request id {0} is already in flight")]
    DuplicateId(RequestId),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("server error: {0}")]
    Remote(RpcError),
    #[error("unexpected reply: {0}")]
    UnexpectedReply(String),
}

#[derive(Default)]
struct Pending {
    waiters: HashMap<RequestId, oneshot::Sender<RpcMessage>>,
    closed: bool,
}

struct StreamLink {
    writer: tokio::sync::Mutex<Box<dyn AsyncWrite + Send + Unpin>>,
    pending: Arc<Mutex<Pending>>,
    tasks: Vec<JoinHandle<()>>,
    _child: Option<Child>,
}

struct HttpLink {
    client: reqwest::Client,
    endpoint: reqwest::Url,
}

enum Link {
    Stream(StreamLink),
    Http(HttpLink),
}

struct Inner {
    link: Link,
    next_id: AtomicI64,
    timeout: Duration,
    inbound: broadcast::Sender<RpcMessage>,
}

impl Drop for Inner {
    fn drop(&mut self) {
        if let Link::Stream(s) = &self.link {
            for t in &s.tasks {
                t.abort();
            }
        }
    }
}

/// A client connection. Cheap to clone; clones share one underlying link.
/// Writes are serialized and replies are matched to requests by id.
#[derive(Clone)]
pub struct Connection {
    inner: Arc<Inner>,
}

/// Opens a connection described by `cfg`.
pub async fn open_transport(cfg: &TransportConfig) -> Result<Connection, TransportError> {
    cfg.validate()?;
    let timeout = Duration::from_millis(cfg.timeout_ms);
    match &cfg.kind {
        TransportKind::Stdio { command, args, env } => {
            let mut child = Command::new(command)
                .args(args)
                .envs(env)
                .stdin(Stdio::piped())
                .stdout(Stdio::piped())
                .stderr(Stdio::piped())
                .kill_on_drop(true)
                .spawn()
                .map_err(|e| TransportError::Spawn {
                    command: command.clone(),
                    reason: e.to_string(),
                })?;
            let stdin = child.stdin.take().expect("stdin is piped");
            let stdout = child.stdout.take().expect("stdout is piped");
            let stderr = child.stderr.take().expect("stderr is piped");
            let label = command.clone();
            let stderr_task = tokio::spawn(async move {
                let mut lines = BufReader::new(stderr).lines();
                while let Ok(Some(line)) = lines.next_line().await {
                    tracing::info!(server = %label, "{line}");
                }
            });
            Ok(Connection::build_stream(
                stdout,
                stdin,
                timeout,
                Some(child),
                vec![stderr_task],
            ))
        }
        TransportKind::Http { url } => {
            let base = reqwest::Url::parse(url)
                .map_err(|e| TransportError::Config(format!("bad url {url}: {e}")))?;
            let host = base
                .host_str()
                .ok_or_else(|| TransportError::Config(format!("url {url} has no host")))?
                .to_owned();
            let port = base.port_or_known_default().unwrap_or(80);
            tokio::time::timeout(timeout, tokio::net::TcpStream::connect((host.as_str(), port)))
                .await
                .map_err(|_| TransportError::Http(format!("connect to {host}:{port} timed out")))?
                .map_err(|e| TransportError::Http(format!("connect to {host}:{port}: {e}")))?;
            let endpoint = rpc_endpoint(&base)?;
            let client = reqwest::Client::builder()
                .build()
                .map_err(|e| TransportError::Http(e.to_string()))?;
            let (inbound, _) = broadcast::channel(64);
            Ok(Connection {
                inner: Arc::new(Inner {
                    link: Link::Http(HttpLink { client, endpoint }),
                    next_id: AtomicI64::new(1),
                    timeout,
                    inbound,
                }),
            })
        }
    }
}

fn rpc_endpoint(base: &reqwest::Url) -> Result<reqwest::Url, TransportError> {
    let mut s = base.as_str().trim_end_matches('/').to_owned();
    s.push_str("/rpc");
    reqwest::Url::parse(&s).map_err(|e| TransportError::Config(e.to_string()))
}

impl Connection {
    /// Wraps an already-connected byte stream pair (e.g. `tokio::io::duplex`).
    pub fn from_streams<R, W>(reader: R, writer: W, timeout: Duration) -> Self
    where
        R: AsyncRead + Send + Unpin + 'static,
        W: AsyncWrite + Send + Unpin + 'static,
    {
        Self::build_stream(reader, writer, timeout, None, Vec::new())
    }

    fn build_stream<R, W>(
        reader: R,
        writer: W,
        timeout: Duration,
        child: Option<Child>,
        mut tasks: Vec<JoinHandle<()>>,
    ) -> Self
    where
        R: AsyncRead + Send + Unpin + 'static,
        W: AsyncWrite + Send + Unpin + 'static,
    {
        let pending = Arc::new(Mutex::new(Pending::default()));
        let (inbound, _) = broadcast::channel(64);
        tasks.push(tokio::spawn(read_loop(reader, pending.clone(), inbound.clone())));
        Connection {
            inner: Arc::new(Inner {
                link: Link::Stream(StreamLink {
                    writer: tokio::sync::Mutex::new(Box::new(writer)),
                    pending,
                    tasks,
                    _child: child,
                }),
                next_id: AtomicI64::new(1),
                timeout,
                inbound,
            }),
        }
    }

    pub fn timeout(&self) -> Duration {
        self.inner.timeout
    }

    /// Inbound messages that are not replies to our requests
    /// (server notifications and requests).
    pub fn inbound(&self) -> broadcast::Receiver<RpcMessage> {
        self.inner.inbound.subscribe()
    }

    /// True when both handles share one underlying link.
    pub fn same_link(&self, other: &Connection) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner)
    }

    pub fn is_closed(&self) -> bool {
        match &self.inner.link {
            Link::Stream(s) => s.pending.lock().closed,
            Link::Http(_) => false,
        }
    }

    pub fn next_id(&self) -> RequestId {
        RequestId::Number(self.inner.next_id.fetch_add(1, Ordering::Relaxed))
    }

    /// Sends a message without waiting for any reply.
    pub async fn send(&self, msg: &RpcMessage) -> Result<(), TransportError> {
        match &self.inner.link {
            Link::Stream(s) => write_frame(s, msg).await,
            Link::Http(h) => {
                post(h, msg, self.inner.timeout).await?;
                Ok(())
            }
        }
    }

    /// Sends a request and waits for the reply bearing the same id.
    pub async fn call(&self, msg: RpcMessage) -> Result<RpcMessage, TransportError> {
        let RpcMessage::Request { id, .. } = &msg else {
            return Err(TransportError::UnexpectedReply(
                "call() requires a request message".into(),
            ));
        };
        let id = id.clone();
        match &self.inner.link {
            Link::Stream(s) => {
                let rx = {
                    let mut pending = s.pending.lock();
                    if pending.closed {
                        return Err(TransportError::Closed);
                    }
                    if pending.waiters.contains_key(&id) {
                        return Err(TransportError::DuplicateId(id));
                    }
                    let (tx, rx) = oneshot::channel();
                    pending.waiters.insert(id.clone(), tx);
                    rx
                };
                if let Err(e) = write_frame(s, &msg).await {
                    s.pending.lock().waiters.remove(&id);
                    return Err(e);
                }
                match tokio::time::timeout(self.inner.timeout, rx).await {
                    Ok(Ok(reply)) => Ok(reply),
                    Ok(Err(_)) => Err(TransportError::Closed),
                    Err(_) => {
                        s.pending.lock().waiters.remove(&id);
                        Err(TransportError::Timeout { id })
                    }
                }
            }
            Link::Http(h) => {
                match tokio::time::timeout(self.inner.timeout, post(h, &msg, self.inner.timeout))
                    .await
                {
                    Err(_) => Err(TransportError::Timeout { id }),
                    Ok(Err(e)) => Err(e),
                    Ok(Ok(None)) => Err(TransportError::UnexpectedReply("empty body".into())),
                    Ok(Ok(Some(reply))) if reply.id() == Some(&id) => Ok(reply),
                    Ok(Ok(Some(reply))) => Err(TransportError::UnexpectedReply(format!(
                        "reply id {:?} does not match request {id}",
                        reply.id()
                    ))),
                }
            }
        }
    }

    /// Sends a request with a fresh id and unwraps the result.
    pub async fn request(&self, method: &str, params: Option<Value>) -> Result<Value, TransportError> {
        let msg = RpcMessage::request(self.next_id(), method, params);
        match self.call(msg).await? {
            RpcMessage::Response { result, .. } => Ok(result),
            RpcMessage::ErrorResponse { error, .. } => Err(TransportError::Remote(error)),
            other => Err(TransportError::UnexpectedReply(format!("{other:?}"))),
        }
    }

    pub async fn notify(&self, method: &str, params: Option<Value>) -> Result<(), TransportError> {
        self.send(&RpcMessage::Notification {
            method: method.into(),
            params,
        })
        .await
    }

    /// Performs the initialize handshake and returns the server's identity.
    pub async fn initialize(&self) -> Result<ServerIdentity, TransportError> {
        let result = self
            .request(
                "initialize",
                Some(json!({
                    "protocolVersion": PROTOCOL_VERSION,
                    "capabilities": {},
                    "clientInfo": {"name": "labmcp-host", "version": env!("CARGO_PKG_VERSION")},
                })),
            )
            .await?;
        let identity: ServerIdentity = serde_json::from_value(result["serverInfo"].clone())
            .map_err(|e| TransportError::UnexpectedReply(format!("initialize result: {e}")))?;
        self.notify("notifications/initialized", None).await?;
        Ok(identity)
    }

    pub async fn list_tools(&self) -> Result<Vec<ToolDescriptor>, TransportError> {
        let result = self.request("tools/list", None).await?;
        serde_json::from_value(result["tools"].clone())
            .map_err(|e| TransportError::UnexpectedReply(format!("tools/list result: {e}")))
    }

    pub async fn call_tool(&self, name: &str, args: Value) -> Result<ToolCallResult, TransportError> {
        let result = self
            .request("tools/call", Some(json!({"name": name, "arguments": args})))
            .await?;
        serde_json::from_value(result)
            .map_err(|e| TransportError::UnexpectedReply(format!("tools/call result: {e}")))
    }
}

async fn write_frame(link: &StreamLink, msg: &RpcMessage) -> Result<(), TransportError> {
    let bytes = frame_message(msg)?;
    let mut w = link.writer.lock().await;
    w.write_all(&bytes)
        .await
        .map_err(|e| TransportError::Io(e.to_string()))?;
    w.flush().await.map_err(|e| TransportError::Io(e.to_string()))
}

async fn post(
    link: &HttpLink,
    msg: &RpcMessage,
    timeout: Duration,
) -> Result<Option<RpcMessage>, TransportError> {
    let body = frame_message(msg)?;
    let resp = link
        .client
        .post(link.endpoint.clone())
        .header("content-type", "application/json")
        .timeout(timeout)
        .body(body)
        .send()
        .await
        .map_err(|e| TransportError::Http(e.to_string()))?;
    let status = resp.status();
    let bytes = resp
        .bytes()
        .await
        .map_err(|e| TransportError::Http(e.to_string()))?;
    if bytes.iter().all(u8::is_ascii_whitespace) {
        return if status.is_success() {
            Ok(None)
        } else {
            Err(TransportError::Http(format!("status {status}")))
        };
    }
    Ok(Some(parse_message(&bytes)?))
}

async fn read_loop<R: AsyncRead + Unpin>(
    reader: R,
    pending: Arc<Mutex<Pending>>,
    inbound: broadcast::Sender<RpcMessage>,
) {
    let mut lines = BufReader::new(reader).lines();
    loop {
        match lines.next_line().await {
            Ok(Some(line)) => {
                if line.trim().is_empty() {
                    continue;
                }
                match parse_message(line.as_bytes()) {
                    Ok(msg) if msg.is_reply() => {
                        let waiter = msg.id().and_then(|id| pending.lock().waiters.remove(id));
                        match waiter {
                            Some(tx) => {
                                let _ = tx.send(msg);
                            }
                            None => tracing::warn!("uncorrelated reply: {line}"),
                        }
                    }
                    Ok(msg) => {
                        let _ = inbound.send(msg);
                    }
                    Err(e) => tracing::warn!("unreadable line from server: {e}"),
                }
            }
            Ok(None) => break,
            Err(e) => {
                tracing::warn!("read error: {e}");
                break;
            }
        }
    }
    let mut p = pending.lock();
    p.closed = true;
    p.waiters.clear();
}
