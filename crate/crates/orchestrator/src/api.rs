//! HTTP API: JSON endpoints plus server-sent event streams.

use std::convert::Infallible;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream, StreamExt};
use labmcp_core::agent::{AgentError, Decision, SessionEventRecord};
use labmcp_core::workflow::Issue;
use labmcp_core::{EventLog, ExecutionEvent, WorkflowError};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::net::TcpListener;

use crate::service::{ChatError, Orchestrator, SubmitError};

pub struct ApiError {
    status: StatusCode,
    body: Value,
}

impl ApiError {
    fn not_found(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::NOT_FOUND,
            body: json!({"error": message.into()}),
        }
    }

    fn bad_request(message: impl Into<String>, violations: Vec<Issue>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            body: json!({"error": message.into(), "violations": violations}),
        }
    }

    fn conflict(body: Value) -> Self {
        Self {
            status: StatusCode::CONFLICT,
            body,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

fn violation(message: impl Into<String>) -> Issue {
    Issue {
        block_id: None,
        message: message.into(),
    }
}

fn json_body(body: &Bytes) -> Result<Value, ApiError> {
    serde_json::from_slice(body)
        .map_err(|e| ApiError::bad_request("request body is not valid JSON", vec![violation(e.to_string())]))
}

fn typed_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_value(json_body(body)?)
        .map_err(|e| ApiError::bad_request("request body has the wrong shape", vec![violation(e.to_string())]))
}

fn workflow_error(e: WorkflowError) -> ApiError {
    ApiError::bad_request("invalid workflow", e.issues())
}

impl From<ChatError> for ApiError {
    fn from(e: ChatError) -> Self {
        match e {
            ChatError::UnknownSession(_) | ChatError::Agent(AgentError::UnknownProposal(_)) => {
                ApiError::not_found(e.to_string())
            }
            ChatError::Agent(AgentError::AwaitingApproval(ref id)) => {
                ApiError::conflict(json!({"error": e.to_string(), "proposal_id": id}))
            }
        }
    }
}

pub fn router(orch: Arc<Orchestrator>) -> Router {
    Router::new()
        .route("/servers", get(servers))
        .route("/toolbox", get(toolbox))
        .route("/workflows/validate", post(validate))
        .route("/workflows/run", post(run_workflow))
        .route("/runs/{id}", get(run_status))
        .route("/runs/{id}/events", get(run_events))
        .route("/runs/{id}/cancel", post(cancel_run))
        .route("/chat/{session}", post(chat))
        .route("/chat/{session}/events", get(chat_events))
        .route("/chat/{session}/approvals/{proposal}", post(approve))
        .route("/chat/{session}/auto-approve", post(auto_approve))
        .with_state(orch)
}

/// Binds `addr` and serves until `shutdown` resolves.
pub async fn serve(
    orch: Arc<Orchestrator>,
    addr: SocketAddr,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> anyhow::Result<()> {
    let listener = TcpListener::bind(addr)
        .await
        .map_err(|e| anyhow::anyhow!("cannot bind {addr}: {e}"))?;
    tracing::info!("orchestrator listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(orch))
        .with_graceful_shutdown(shutdown)
        .await?;
    Ok(())
}

type Orch = State<Arc<Orchestrator>>;

async fn servers(State(o): Orch) -> impl IntoResponse {
    Json(o.servers())
}

async fn toolbox(State(o): Orch) -> impl IntoResponse {
    Json(o.toolbox())
}

async fn validate(State(o): Orch, body: Bytes) -> Result<impl IntoResponse, ApiError> {
    let doc = json_body(&body)?;
    Ok(Json(o.validate(&doc)))
}

async fn run_workflow(State(o): Orch, body: Bytes) -> Result<impl IntoResponse, ApiError> {
    let doc = json_body(&body)?;
    match o.submit_run(&doc) {
        Ok(rec) => Ok(Json(json!({"run_id": rec.run_id}))),
        Err(SubmitError::Invalid(e)) => Err(workflow_error(e)),
        Err(e @ SubmitError::Busy { .. }) => {
            let SubmitError::Busy { alias, run_id } = &e else { unreachable!() };
            Err(ApiError::conflict(json!({"error": e.to_string(), "alias": alias, "run_id": run_id})))
        }
    }
}

async fn run_status(State(o): Orch, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    let rec = o.run(&id).ok_or_else(|| ApiError::not_found(format!("unknown run {id}")))?;
    Ok(Json(json!({
        "run_id": rec.run_id,
        "status": rec.status(),
        "events": rec.log.len(),
        "workflow": rec.workflow,
    })))
}

async fn cancel_run(State(o): Orch, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    if !o.cancel(&id) {
        return Err(ApiError::not_found(format!("unknown run {id}")));
    }
    Ok(Json(json!({"run_id": id, "cancel_requested": true})))
}

fn last_event_id(headers: &HeaderMap) -> Option<u64> {
    headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.trim().parse().ok())
}

trait Sequenced: Clone + Serialize + Send + Sync + 'static {
    fn seq(&self) -> u64;
    fn name(&self) -> String;
}

impl Sequenced for ExecutionEvent {
    fn seq(&self) -> u64 {
        self.seq
    }

    fn name(&self) -> String {
        serde_json::to_value(self.kind)
            .ok()
            .and_then(|v| v.as_str().map(str::to_owned))
            .unwrap_or_default()
    }
}

impl Sequenced for SessionEventRecord {
    fn seq(&self) -> u64 {
        self.seq
    }

    fn name(&self) -> String {
        serde_json::to_value(&self.event)
            .ok()
            .and_then(|v| v.get("type").and_then(Value::as_str).map(str::to_owned))
            .unwrap_or_default()
    }
}

/// Replays the log, then follows it live until it closes. Events up to
/// `after` are skipped so a reconnecting client can resume.
fn event_stream<T: Sequenced>(
    log: &EventLog<T>,
    after: Option<u64>,
) -> impl Stream<Item = Result<Event, Infallible>> {
    let (replay, rx) = log.subscribe();
    let live = stream::unfold(rx, |rx| async move {
        let mut rx = rx?;
        match rx.recv().await {
            Ok(e) => Some((e, Some(rx))),
            // Closed or lagged: end the stream; the client resumes with Last-Event-ID.
            Err(_) => None,
        }
    });
    stream::iter(replay)
        .chain(live)
        .filter(move |e| std::future::ready(after.is_none_or(|a| e.seq() > a)))
        .map(|e| {
            let event = Event::default()
                .id(e.seq().to_string())
                .event(e.name())
                .json_data(&e)
                .expect("event serializes");
            Ok(event)
        })
}

async fn run_events(
    State(o): Orch,
    Path(id): Path<String>,
    headers: HeaderMap,
) -> Result<impl IntoResponse, ApiError> {
    let rec = o.run(&id).ok_or_else(|| ApiError::not_found(format!("unknown run {id}")))?;
    Ok(Sse::new(event_stream(&rec.log, last_event_id(&headers))).keep_alive(KeepAlive::default()))
}

async fn chat_events(State(o): Orch, Path(session): Path<String>, headers: HeaderMap) -> impl IntoResponse {
    let log = o.chat_log(&session);
    Sse::new(event_stream(&log, last_event_id(&headers))).keep_alive(KeepAlive::default())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ChatBody {
    text: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DecisionBody {
    decision: Decision,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AutoApproveBody {
    enabled: bool,
}

async fn chat(State(o): Orch, Path(session): Path<String>, body: Bytes) -> Result<impl IntoResponse, ApiError> {
    let ChatBody { text } = typed_body(&body)?;
    let events = o.chat(&session, &text).await?;
    Ok(Json(json!({"session_id": session, "events": events})))
}

async fn approve(
    State(o): Orch,
    Path((session, proposal)): Path<(String, String)>,
    body: Bytes,
) -> Result<impl IntoResponse, ApiError> {
    let DecisionBody { decision } = typed_body(&body)?;
    let events = o.resolve(&session, &proposal, decision).await?;
    Ok(Json(json!({"session_id": session, "events": events})))
}

async fn auto_approve(
    State(o): Orch,
    Path(session): Path<String>,
    body: Bytes,
) -> Result<impl IntoResponse, ApiError> {
    let AutoApproveBody { enabled } = typed_body(&body)?;
    let events = o.set_auto_approve(&session, enabled).await;
    Ok(Json(json!({"session_id": session, "auto_approve": enabled, "events": events})))
}
