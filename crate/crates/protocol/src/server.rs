//! A small framework for MCP tool servers: register tool handlers, then
//! serve `initialize`, `tools/list` and `tools/call` over stdio, HTTP, or an
//! in-process stream pair.

use std::future::Future;
use std::net::SocketAddr;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::Router;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;
use tokio::io::{AsyncBufReadExt, AsyncRead, AsyncWrite, AsyncWriteExt, BufReader};
use tokio::net::TcpListener;
use tokio::task::JoinHandle;

use crate::content::ToolCallResult;
use crate::message::{
    frame_message, parse_message, salvage_id, RequestId, RpcError, RpcMessage, INVALID_PARAMS,
    METHOD_NOT_FOUND,
};
use crate::schema::{validate_args, ToolDescriptor};
use crate::transport::{Connection, DEFAULT_TIMEOUT_MS};
use crate::PROTOCOL_VERSION;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServerIdentity {
    pub name: String,
    pub version: String,
}

impl ServerIdentity {
    pub fn new(name: impl Into<String>, version: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            version: version.into(),
        }
    }
}

/// Handlers receive arguments that already passed schema validation.
pub type ToolHandler = Box<dyn FnMut(&Map<String, Value>) -> ToolCallResult + Send>;

pub struct ToolRegistration {
    pub descriptor: ToolDescriptor,
    pub handler: ToolHandler,
}

impl ToolRegistration {
    pub fn new<F>(descriptor: ToolDescriptor, handler: F) -> Self
    where
        F: FnMut(&Map<String, Value>) -> ToolCallResult + Send + 'static,
    {
        Self {
            descriptor,
            handler: Box::new(handler),
        }
    }
}

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("tool {0} is already registered")]
    DuplicateTool(String),
    #[error("invalid server identity: name and version must be non-empty")]
    InvalidIdentity,
    #[error("invalid tool descriptor: {0}")]
    InvalidDescriptor(String),
    #[error("cannot bind {addr}: {reason}")]
    Bind { addr: String, reason: String },
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

pub struct ToolServer {
    identity: ServerIdentity,
    tools: Vec<ToolRegistration>,
}

impl std::fmt::Debug for ToolServer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ToolServer")
            .field("identity", &self.identity)
            .field("tools", &self.tools.iter().map(|t| &t.descriptor.name).collect::<Vec<_>>())
            .finish()
    }
}

impl ToolServer {
    pub fn new(identity: ServerIdentity) -> Result<Self, ServerError> {
        if identity.name.trim().is_empty() || identity.version.trim().is_empty() {
            return Err(ServerError::InvalidIdentity);
        }
        Ok(Self {
            identity,
            tools: Vec::new(),
        })
    }

    pub fn identity(&self) -> &ServerIdentity {
        &self.identity
    }

    pub fn register_tool(&mut self, reg: ToolRegistration) -> Result<(), ServerError> {
        let name = &reg.descriptor.name;
        if name.trim().is_empty() {
            return Err(ServerError::InvalidDescriptor("tool name is empty".into()));
        }
        if self.tools.iter().any(|t| &t.descriptor.name == name) {
            return Err(ServerError::DuplicateTool(name.clone()));
        }
        self.tools.push(reg);
        Ok(())
    }

    /// Builder-style registration.
    pub fn with_tool<F>(mut self, descriptor: ToolDescriptor, handler: F) -> Result<Self, ServerError>
    where
        F: FnMut(&Map<String, Value>) -> ToolCallResult + Send + 'static,
    {
        self.register_tool(ToolRegistration::new(descriptor, handler))?;
        Ok(self)
    }

    pub fn descriptors(&self) -> impl Iterator<Item = &ToolDescriptor> {
        self.tools.iter().map(|t| &t.descriptor)
    }

    /// Handles one message. Returns the reply, if the message warrants one.
    pub fn dispatch(&mut self, msg: RpcMessage) -> Option<RpcMessage> {
        let (id, method, params) = match msg {
            RpcMessage::Request { id, method, params } => (id, method, params),
            // Notifications and stray replies get no answer.
            _ => return None,
        };
        let reply = match method.as_str() {
            "initialize" => Ok(json!({
                "protocolVersion": PROTOCOL_VERSION,
                "capabilities": {"tools": {"listChanged": false}},
                "serverInfo": self.identity,
            })),
            "ping" => Ok(json!({})),
            "tools/list" => Ok(json!({
                "tools": self.descriptors().collect::<Vec<_>>(),
            })),
            "tools/call" => self.call(params),
            other => Err(RpcError::new(
                METHOD_NOT_FOUND,
                format!("method not found: {other}"),
            )),
        };
        Some(match reply {
            Ok(result) => RpcMessage::response(id, result),
            Err(error) => RpcMessage::error(Some(id), error),
        })
    }

    fn call(&mut self, params: Option<Value>) -> Result<Value, RpcError> {
        let params = match params {
            Some(Value::Object(p)) => p,
            _ => return Err(RpcError::new(INVALID_PARAMS, "tools/call expects an object")),
        };
        let name = params
            .get("name")
            .and_then(Value::as_str)
            .ok_or_else(|| RpcError::new(INVALID_PARAMS, "tools/call requires a tool name"))?;
        let args = match params.get("arguments") {
            None | Some(Value::Null) => Map::new(),
            Some(Value::Object(a)) => a.clone(),
            Some(_) => return Err(RpcError::new(INVALID_PARAMS, "arguments must be an object")),
        };
        let tool = self
            .tools
            .iter_mut()
            .find(|t| t.descriptor.name == name)
            .ok_or_else(|| RpcError::new(INVALID_PARAMS, format!("unknown tool: {name}")))?;
        if let Err(violations) = validate_args(&tool.descriptor.input_schema, &Value::Object(args.clone())) {
            let messages: Vec<String> = violations.iter().map(ToString::to_string).collect();
            return Err(RpcError::new(
                INVALID_PARAMS,
                format!("invalid arguments for {name}: {}", messages.join("; ")),
            )
            .with_data(json!({"violations": violations})));
        }
        let result = match catch_unwind(AssertUnwindSafe(|| (tool.handler)(&args))) {
            Ok(result) => match result.validate() {
                Ok(()) => result,
                Err(e) => ToolCallResult::error(format!("tool {name} returned malformed content: {e}")),
            },
            Err(panic) => {
                let detail = panic
                    .downcast_ref::<&str>()
                    .map(|s| s.to_string())
                    .or_else(|| panic.downcast_ref::<String>().cloned())
                    .unwrap_or_else(|| "unknown panic".into());
                ToolCallResult::error(format!("tool {name} failed: {detail}"))
            }
        };
        Ok(serde_json::to_value(result).expect("tool results serialize"))
    }

    /// Handles one framed line, returning the framed reply if any.
    /// Malformed input yields a JSON-RPC error reply rather than an error.
    pub fn handle_line(&mut self, line: &[u8]) -> Option<Vec<u8>> {
        let reply = match parse_message(line) {
            Ok(msg) => self.dispatch(msg)?,
            Err(e) => {
                let id: Option<RequestId> = salvage_id(line);
                RpcMessage::error(id, e.to_rpc_error())
            }
        };
        match frame_message(&reply) {
            Ok(bytes) => Some(bytes),
            Err(e) => {
                let fallback = RpcMessage::error(reply.id().cloned(), e.to_rpc_error());
                frame_message(&fallback).ok()
            }
        }
    }

    pub fn into_shared(self) -> SharedServer {
        SharedServer(Arc::new(Mutex::new(self)))
    }
}

/// A server that can be driven from several tasks; requests are still
/// handled one at a time.
#[derive(Clone)]
pub struct SharedServer(Arc<Mutex<ToolServer>>);

impl SharedServer {
    pub async fn handle_line(&self, line: Vec<u8>) -> Option<Vec<u8>> {
        let inner = self.0.clone();
        tokio::task::spawn_blocking(move || inner.lock().handle_line(&line))
            .await
            .unwrap_or_else(|e| {
                tracing::error!("dispatcher task failed: {e}");
                None
            })
    }

    pub fn with<R>(&self, f: impl FnOnce(&mut ToolServer) -> R) -> R {
        f(&mut self.0.lock())
    }
}

/// Serves newline-delimited messages until `reader` reaches EOF.
pub async fn serve_streams<R, W>(server: SharedServer, reader: R, mut writer: W) -> std::io::Result<()>
where
    R: AsyncRead + Unpin,
    W: AsyncWrite + Unpin,
{
    let mut lines = BufReader::new(reader).lines();
    while let Some(line) = lines.next_line().await? {
        if line.trim().is_empty() {
            continue;
        }
        if let Some(reply) = server.handle_line(line.into_bytes()).await {
            writer.write_all(&reply).await?;
            writer.flush().await?;
        }
    }
    Ok(())
}

/// Serves on this process's stdin/stdout; returns on stdin EOF.
pub async fn serve_stdio(server: SharedServer) -> std::io::Result<()> {
    serve_streams(server, tokio::io::stdin(), tokio::io::stdout()).await
}

/// Runs `server` inside this process and returns a client connection to it.
pub fn spawn_in_process(server: ToolServer) -> Connection {
    spawn_shared_in_process(server.into_shared())
}

pub fn spawn_shared_in_process(server: SharedServer) -> Connection {
    let (client, srv) = tokio::io::duplex(1 << 16);
    let (sr, sw) = tokio::io::split(srv);
    tokio::spawn(async move {
        if let Err(e) = serve_streams(server, sr, sw).await {
            tracing::warn!("in-process server stopped: {e}");
        }
    });
    let (cr, cw) = tokio::io::split(client);
    Connection::from_streams(cr, cw, Duration::from_millis(DEFAULT_TIMEOUT_MS))
}

async fn rpc_handler(State(server): State<SharedServer>, body: Bytes) -> Response {
    match server.handle_line(body.to_vec()).await {
        Some(reply) => ([(header::CONTENT_TYPE, "application/json")], reply).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    }
}

pub fn http_router(server: SharedServer) -> Router {
    Router::new()
        .route("/rpc", post(rpc_handler))
        .with_state(server)
}

/// An HTTP server bound to a port but not yet accepting.
pub struct BoundHttp {
    listener: TcpListener,
    router: Router,
}

impl BoundHttp {
    pub async fn bind(server: SharedServer, addr: SocketAddr) -> Result<Self, ServerError> {
        let listener = TcpListener::bind(addr).await.map_err(|e| ServerError::Bind {
            addr: addr.to_string(),
            reason: e.to_string(),
        })?;
        Ok(Self {
            listener,
            router: http_router(server),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.listener.local_addr().expect("bound listener has an address")
    }

    pub async fn serve(self, shutdown: impl Future<Output = ()> + Send + 'static) -> Result<(), ServerError> {
        axum::serve(self.listener, self.router)
            .with_graceful_shutdown(shutdown)
            .await?;
        Ok(())
    }

    /// Serves in a background task until the returned handle is stopped.
    pub fn spawn(self) -> RunningHttp {
        let addr = self.local_addr();
        let (tx, rx) = tokio::sync::oneshot::channel::<()>();
        let task = tokio::spawn(async move {
            let _ = self
                .serve(async {
                    let _ = rx.await;
                })
                .await;
        });
        RunningHttp {
            addr,
            stop: Some(tx),
            task,
        }
    }
}

pub struct RunningHttp {
    pub addr: SocketAddr,
    stop: Option<tokio::sync::oneshot::Sender<()>>,
    task: JoinHandle<()>,
}

impl RunningHttp {
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub async fn stop(mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        self.task.abort();
        let _ = (&mut self.task).await;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum TransportChoice {
    Stdio,
    Http,
}

/// Command-line flags shared by every bundled server executable.
#[derive(Debug, Clone, clap::Args)]
pub struct ServeArgs {
    #[arg(long, value_enum, default_value = "stdio")]
    pub transport: TransportChoice,
    #[arg(long, default_value_t = 8700)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: std::net::IpAddr,
}

/// Serves per `args` until stdin EOF (stdio) or Ctrl-C (http).
pub async fn run(server: ToolServer, args: &ServeArgs) -> Result<(), ServerError> {
    let shared = server.into_shared();
    match args.transport {
        TransportChoice::Stdio => Ok(serve_stdio(shared).await?),
        TransportChoice::Http => {
            let bound = BoundHttp::bind(shared, SocketAddr::new(args.host, args.port)).await?;
            tracing::info!("listening on http://{}", bound.local_addr());
            bound
                .serve(async {
                    let _ = tokio::signal::ctrl_c().await;
                })
                .await
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::message::{INVALID_REQUEST, PARSE_ERROR};
    use crate::schema::{InputSchema, PropertySchema};

    fn echo_server() -> ToolServer {
        ToolServer::new(ServerIdentity::new("echo", "1.0"))
            .unwrap()
            .with_tool(
                ToolDescriptor::new(
                    "echo",
                    "Echo text back",
                    InputSchema::new().property("text", PropertySchema::string(), true),
                ),
                |args| ToolCallResult::text(args["text"].as_str().unwrap_or_default()),
            )
            .unwrap()
            .with_tool(
                ToolDescriptor::new("boom", "Always panics", InputSchema::new()),
                |_| panic!("kaboom"),
            )
            .unwrap()
    }

    fn call(server: &mut ToolServer, id: i64, method: &str, params: Value) -> RpcMessage {
        server
            .dispatch(RpcMessage::request(id, method, Some(params)))
            .unwrap()
    }

    #[test]
    fn register_rejects_duplicates() {
        let mut s = echo_server();
        let err = s
            .register_tool(ToolRegistration::new(
                ToolDescriptor::new("echo", "", InputSchema::new()),
                |_| ToolCallResult::text(""),
            ))
            .unwrap_err();
        assert!(matches!(err, ServerError::DuplicateTool(_)));
        assert_eq!(s.descriptors().count(), 2);
    }

    #[test]
    fn identity_must_be_non_empty() {
        assert!(ToolServer::new(ServerIdentity::new("", "1")).is_err());
    }

    #[test]
    fn tools_list_is_stable_and_ordered() {
        let mut s = ToolServer::new(ServerIdentity::new("s", "1")).unwrap();
        for name in ["c", "a", "b"] {
            s.register_tool(ToolRegistration::new(
                ToolDescriptor::new(name, "", InputSchema::new()),
                |_| ToolCallResult::text("ok"),
            ))
            .unwrap();
        }
        let first = call(&mut s, 1, "tools/list", json!({}));
        let second = call(&mut s, 2, "tools/list", json!({}));
        let RpcMessage::Response { result: a, .. } = first else { panic!() };
        let RpcMessage::Response { result: b, .. } = second else { panic!() };
        assert_eq!(a, b);
        let names: Vec<_> = a["tools"].as_array().unwrap().iter().map(|t| t["name"].clone()).collect();
        assert_eq!(names, [json!("c"), json!("a"), json!("b")]);
    }

    #[test]
    fn echo_call_and_invalid_args() {
        let mut s = echo_server();
        let reply = call(&mut s, 1, "tools/call", json!({"name": "echo", "arguments": {"text": "hi"}}));
        let RpcMessage::Response { result, .. } = reply else { panic!("{reply:?}") };
        let result: ToolCallResult = serde_json::from_value(result).unwrap();
        assert_eq!(result, ToolCallResult::text("hi"));

        let reply = call(&mut s, 2, "tools/call", json!({"name": "echo", "arguments": {}}));
        let RpcMessage::ErrorResponse { error, .. } = reply else { panic!() };
        assert_eq!(error.code, INVALID_PARAMS);
        assert_eq!(error.data.unwrap()["violations"][0]["kind"], "missing");
    }

    #[test]
    fn panicking_handler_is_confined() {
        let mut s = echo_server();
        let reply = call(&mut s, 1, "tools/call", json!({"name": "boom"}));
        let RpcMessage::Response { result, .. } = reply else { panic!() };
        assert_eq!(result["isError"], true);
        assert!(result["content"][0]["text"].as_str().unwrap().contains("kaboom"));
        let reply = call(&mut s, 2, "tools/call", json!({"name": "echo", "arguments": {"text": "still"}}));
        assert!(matches!(reply, RpcMessage::Response { .. }));
    }

    #[test]
    fn error_codes() {
        let mut s = echo_server();
        let reply = call(&mut s, 1, "resources/list", json!({}));
        let RpcMessage::ErrorResponse { error, .. } = reply else { panic!() };
        assert_eq!(error.code, METHOD_NOT_FOUND);

        let bytes = s.handle_line(b"{not json").unwrap();
        let RpcMessage::ErrorResponse { id, error } = parse_message(&bytes).unwrap() else { panic!() };
        assert_eq!(error.code, PARSE_ERROR);
        assert_eq!(id, None);

        let bytes = s.handle_line(br#"{"jsonrpc":"2.0","id":5}"#).unwrap();
        let RpcMessage::ErrorResponse { id, error } = parse_message(&bytes).unwrap() else { panic!() };
        assert_eq!(error.code, INVALID_REQUEST);
        assert_eq!(id, Some(5.into()));
    }

    #[test]
    fn notifications_get_no_reply() {
        let mut s = echo_server();
        assert!(s
            .handle_line(br#"{"jsonrpc":"2.0","method":"notifications/initialized"}"#)
            .is_none());
    }

    #[tokio::test]
    async fn busy_port_is_startup_error() {
        let first = BoundHttp::bind(echo_server().into_shared(), "127.0.0.1:0".parse().unwrap())
            .await
            .unwrap();
        let err = BoundHttp::bind(echo_server().into_shared(), first.local_addr())
            .await
            .err()
            .unwrap();
        assert!(matches!(err, ServerError::Bind { .. }));
    }
}
