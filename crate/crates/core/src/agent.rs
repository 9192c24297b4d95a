//! Chat sessions whose LLM backend may request tool calls. Every request
//! becomes a proposal that must be approved, by the user or by the session's
//! auto-approve flag, before it reaches a server.

use std::collections::VecDeque;
use std::sync::Arc;

use async_trait::async_trait;
use chrono::{DateTime, Utc};
use labmcp_protocol::ToolCallResult;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::eventlog::EventLog;
use crate::host::{Host, ToolRef};

/// Consecutive auto-approved calls allowed in one user turn before the
/// session falls back to asking.
pub const AUTO_APPROVE_LIMIT: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Assistant,
    Tool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCallRequest {
    pub server: String,
    pub tool: String,
    #[serde(default)]
    pub args: Map<String, Value>,
}

impl ToolCallRequest {
    pub fn new(server: impl Into<String>, tool: impl Into<String>, args: Value) -> Self {
        Self {
            server: server.into(),
            tool: tool.into(),
            args: match args {
                Value::Object(m) => m,
                _ => Map::new(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_call: Option<ToolCallRequest>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proposal_id: Option<String>,
}

impl ChatMessage {
    fn text(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
            tool_call: None,
            proposal_id: None,
        }
    }
}

/// One backend answer: optional text, then optionally a tool request.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BackendReply {
    #[serde(default)]
    pub text: Option<String>,
    #[serde(default)]
    pub tool_call: Option<ToolCallRequest>,
}

impl BackendReply {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            text: Some(text.into()),
            tool_call: None,
        }
    }

    pub fn call(request: ToolCallRequest) -> Self {
        Self {
            text: None,
            tool_call: Some(request),
        }
    }
}

#[async_trait]
pub trait LlmBackend: Send + Sync {
    async fn respond(&self, transcript: &[ChatMessage], tools: &[ToolRef]) -> Result<BackendReply, String>;
}

type ReplyFn = dyn Fn(&[ChatMessage]) -> Result<BackendReply, String> + Send + Sync;

/// Deterministic backend that replays queued replies, then falls back to a
/// closure (or an error when none is set).
#[derive(Clone, Default)]
pub struct ScriptedBackend {
    queue: Arc<Mutex<VecDeque<Result<BackendReply, String>>>>,
    fallback: Option<Arc<ReplyFn>>,
}

impl ScriptedBackend {
    pub fn new<I: IntoIterator<Item = BackendReply>>(replies: I) -> Self {
        Self {
            queue: Arc::new(Mutex::new(replies.into_iter().map(Ok).collect())),
            fallback: None,
        }
    }

    pub fn with_fallback<F>(mut self, f: F) -> Self
    where
        F: Fn(&[ChatMessage]) -> Result<BackendReply, String> + Send + Sync + 'static,
    {
        self.fallback = Some(Arc::new(f));
        self
    }

    pub fn push(&self, reply: BackendReply) {
        self.queue.lock().push_back(Ok(reply));
    }

    pub fn push_error(&self, message: impl Into<String>) {
        self.queue.lock().push_back(Err(message.into()));
    }

    pub fn remaining(&self) -> usize {
        self.queue.lock().len()
    }
}

#[async_trait]
impl LlmBackend for ScriptedBackend {
    async fn respond(&self, transcript: &[ChatMessage], _tools: &[ToolRef]) -> Result<BackendReply, String> {
        if let Some(next) = self.queue.lock().pop_front() {
            return next;
        }
        match &self.fallback {
            Some(f) => f(transcript),
            None => Err("script exhausted".into()),
        }
    }
}

/// OpenAI-compatible chat-completions client over plain HTTP.
///
/// `LABMCP_LLM_URL` is the API base (e.g. `http://localhost:11434/v1`),
/// `LABMCP_LLM_MODEL` the model name and `LABMCP_LLM_API_KEY` an optional
/// bearer token.
pub struct ChatCompletionsBackend {
    client: reqwest::Client,
    base_url: String,
    model: String,
    api_key: Option<String>,
}

impl ChatCompletionsBackend {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>, api_key: Option<String>) -> Self {
        Self {
            client: reqwest::Client::new(),
            base_url: base_url.into(),
            model: model.into(),
            api_key,
        }
    }

    pub fn from_env() -> Option<Self> {
        let url = std::env::var("LABMCP_LLM_URL").ok()?;
        let model = std::env::var("LABMCP_LLM_MODEL").unwrap_or_else(|_| "gpt-4o-mini".into());
        Some(Self::new(url, model, std::env::var("LABMCP_LLM_API_KEY").ok()))
    }

    fn function_name(t: &ToolRef) -> String {
        format!("{}__{}", t.server_alias, t.tool_name)
    }

    fn request_body(&self, transcript: &[ChatMessage], tools: &[ToolRef]) -> Value {
        let mut messages = vec![json!({
            "role": "system",
            "content": "You operate laboratory instruments through the provided tools. \
                        Each tool call is shown to a human who may approve or reject it.",
        })];
        for m in transcript {
            messages.push(match (m.role, &m.tool_call, &m.proposal_id) {
                (Role::Assistant, Some(call), Some(id)) => json!({
                    "role": "assistant",
                    "content": if m.content.is_empty() { Value::Null } else { json!(m.content) },
                    "tool_calls": [{
                        "id": id,
                        "type": "function",
                        "function": {
                            "name": format!("{}__{}", call.server, call.tool),
                            "arguments": Value::Object(call.args.clone()).to_string(),
                        },
                    }],
                }),
                (Role::Tool, _, Some(id)) => json!({"role": "tool", "tool_call_id": id, "content": m.content}),
                (Role::User, _, _) => json!({"role": "user", "content": m.content}),
                _ => json!({"role": "assistant", "content": m.content}),
            });
        }
        let tools: Vec<Value> = tools
            .iter()
            .map(|t| {
                json!({
                    "type": "function",
                    "function": {
                        "name": Self::function_name(t),
                        "description": t.descriptor.description,
                        "parameters": t.descriptor.input_schema.to_json(),
                    },
                })
            })
            .collect();
        let mut body = json!({"model": self.model, "messages": messages});
        if !tools.is_empty() {
            body["tools"] = Value::Array(tools);
        }
        body
    }
}

#[async_trait]
impl LlmBackend for ChatCompletionsBackend {
    async fn respond(&self, transcript: &[ChatMessage], tools: &[ToolRef]) -> Result<BackendReply, String> {
        let url = format!("{}/chat/completions", self.base_url.trim_end_matches('/'));
        let mut req = self.client.post(url).json(&self.request_body(transcript, tools));
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().await.map_err(|e| e.to_string())?;
        let status = resp.status();
        let body: Value = resp.json().await.map_err(|e| e.to_string())?;
        if !status.is_success() {
            return Err(format!("backend returned {status}: {body}"));
        }
        let message = &body["choices"][0]["message"];
        let text = message["content"]
            .as_str()
            .filter(|s| !s.is_empty())
            .map(str::to_owned);
        let tool_call = match message["tool_calls"].get(0) {
            None => None,
            Some(call) => {
                let name = call["function"]["name"].as_str().unwrap_or_default();
                let args: Value = serde_json::from_str(call["function"]["arguments"].as_str().unwrap_or("{}"))
                    .map_err(|e| format!("tool arguments are not JSON: {e}"))?;
                let (server, tool) = tools
                    .iter()
                    .find(|t| Self::function_name(t) == name)
                    .map(|t| (t.server_alias.clone(), t.tool_name.clone()))
                    .or_else(|| name.split_once("__").map(|(s, t)| (s.to_owned(), t.to_owned())))
                    .unwrap_or_else(|| (String::new(), name.to_owned()));
                Some(ToolCallRequest::new(server, tool, args))
            }
        };
        Ok(BackendReply { text, tool_call })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProposalStatus {
    Pending,
    Approved,
    Rejected,
    Executed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCallProposal {
    pub id: String,
    pub server: String,
    pub tool: String,
    pub args: Map<String, Value>,
    pub status: ProposalStatus,
    pub auto_approved: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<ToolCallResult>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Approve,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SessionEvent {
    UserMessage { text: String },
    AssistantMessage { text: String },
    ProposalPending { proposal: ToolCallProposal },
    ProposalApproved { proposal_id: String, auto: bool },
    ProposalRejected { proposal_id: String },
    ToolExecuted { proposal: ToolCallProposal },
    ToolFailed { proposal: ToolCallProposal },
    AutoApproveChanged { enabled: bool },
    Error { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEventRecord {
    pub session_id: String,
    pub seq: u64,
    #[serde(flatten)]
    pub event: SessionEvent,
    pub timestamp: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AgentError {
    #[error("awaiting approval of proposal {0}")]
    AwaitingApproval(String),
    #[error("no pending proposal {0}")]
    UnknownProposal(String),
}

pub struct ChatSession {
    id: String,
    transcript: Vec<ChatMessage>,
    auto_approve: bool,
    proposals: Vec<ToolCallProposal>,
    pending: Option<usize>,
    log: EventLog<SessionEventRecord>,
    auto_runs: usize,
}

fn summarize(result: &ToolCallResult) -> String {
    let mut parts: Vec<String> = result
        .content
        .iter()
        .map(|b| match b.as_text() {
            Some(t) => t.to_owned(),
            None => "[image]".to_owned(),
        })
        .collect();
    if result.is_error {
        parts.insert(0, "error:".into());
    }
    parts.join("\n")
}

impl ChatSession {
    pub fn new(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            transcript: Vec::new(),
            auto_approve: false,
            proposals: Vec::new(),
            pending: None,
            log: EventLog::new(),
            auto_runs: 0,
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn transcript(&self) -> &[ChatMessage] {
        &self.transcript
    }

    pub fn auto_approve(&self) -> bool {
        self.auto_approve
    }

    pub fn proposals(&self) -> &[ToolCallProposal] {
        &self.proposals
    }

    pub fn pending(&self) -> Option<&ToolCallProposal> {
        self.pending.map(|i| &self.proposals[i])
    }

    pub fn log(&self) -> &EventLog<SessionEventRecord> {
        &self.log
    }

    fn emit(&mut self, event: SessionEvent) {
        let rec = SessionEventRecord {
            session_id: self.id.clone(),
            seq: self.log.len() as u64,
            event,
            timestamp: Utc::now(),
        };
        self.log.push(rec);
    }

    /// Applies to proposals made from now on; a pending one stays pending.
    pub fn set_auto_approve(&mut self, enabled: bool) {
        self.auto_approve = enabled;
        self.emit(SessionEvent::AutoApproveChanged { enabled });
    }

    /// Appends the user's message and consults the backend. Returns the
    /// events produced by this turn.
    pub async fn chat_turn(
        &mut self,
        host: &Host,
        backend: &dyn LlmBackend,
        text: &str,
    ) -> Result<Vec<SessionEventRecord>, AgentError> {
        if let Some(p) = self.pending() {
            return Err(AgentError::AwaitingApproval(p.id.clone()));
        }
        let start = self.log.len();
        self.transcript.push(ChatMessage::text(Role::User, text));
        self.emit(SessionEvent::UserMessage { text: text.into() });
        self.auto_runs = 0;
        self.drive(host, backend).await;
        Ok(self.log.snapshot().split_off(start))
    }

    /// Approves or rejects the pending proposal `proposal_id`, then lets the
    /// backend continue.
    pub async fn resolve(
        &mut self,
        host: &Host,
        backend: &dyn LlmBackend,
        proposal_id: &str,
        decision: Decision,
    ) -> Result<Vec<SessionEventRecord>, AgentError> {
        let idx = match self.pending {
            Some(i) if self.proposals[i].id == proposal_id => i,
            _ => return Err(AgentError::UnknownProposal(proposal_id.to_owned())),
        };
        let start = self.log.len();
        self.pending = None;
        self.auto_runs = 0;
        match decision {
            Decision::Approve => {
                self.proposals[idx].status = ProposalStatus::Approved;
                self.emit(SessionEvent::ProposalApproved {
                    proposal_id: proposal_id.into(),
                    auto: false,
                });
                self.execute(host, idx).await;
            }
            Decision::Reject => {
                self.proposals[idx].status = ProposalStatus::Rejected;
                self.transcript.push(ChatMessage {
                    role: Role::Tool,
                    content: "The user rejected this tool call.".into(),
                    tool_call: None,
                    proposal_id: Some(proposal_id.into()),
                });
                self.emit(SessionEvent::ProposalRejected {
                    proposal_id: proposal_id.into(),
                });
            }
        }
        self.drive(host, backend).await;
        Ok(self.log.snapshot().split_off(start))
    }

    async fn execute(&mut self, host: &Host, idx: usize) {
        let p = &self.proposals[idx];
        debug_assert_eq!(p.status, ProposalStatus::Approved);
        let outcome = host.call_tool(&p.server, &p.tool, p.args.clone()).await;
        let result = outcome.unwrap_or_else(|e| ToolCallResult::error(e.to_string()));
        let p = &mut self.proposals[idx];
        p.status = if result.is_error {
            ProposalStatus::Failed
        } else {
            ProposalStatus::Executed
        };
        self.transcript.push(ChatMessage {
            role: Role::Tool,
            content: summarize(&result),
            tool_call: None,
            proposal_id: Some(p.id.clone()),
        });
        p.result = Some(result);
        let proposal = p.clone();
        self.emit(if proposal.status == ProposalStatus::Executed {
            SessionEvent::ToolExecuted { proposal }
        } else {
            SessionEvent::ToolFailed { proposal }
        });
    }

    async fn drive(&mut self, host: &Host, backend: &dyn LlmBackend) {
        loop {
            let tools = host.list_tools(None).unwrap_or_default();
            let reply = match backend.respond(&self.transcript, &tools).await {
                Ok(r) => r,
                Err(message) => {
                    self.emit(SessionEvent::Error {
                        message: format!("backend error: {message}"),
                    });
                    return;
                }
            };
            if let Some(text) = reply.text.filter(|t| !t.is_empty()) {
                self.transcript.push(ChatMessage::text(Role::Assistant, text.clone()));
                self.emit(SessionEvent::AssistantMessage { text });
            }
            let Some(call) = reply.tool_call else {
                return;
            };
            if !tools
                .iter()
                .any(|t| t.server_alias == call.server && t.tool_name == call.tool)
            {
                self.emit(SessionEvent::Error {
                    message: format!("backend requested unknown tool {}.{}", call.server, call.tool),
                });
                return;
            }
            let id = format!("p{}", self.proposals.len() + 1);
            self.transcript.push(ChatMessage {
                role: Role::Assistant,
                content: String::new(),
                tool_call: Some(call.clone()),
                proposal_id: Some(id.clone()),
            });
            let auto = self.auto_approve && self.auto_runs < AUTO_APPROVE_LIMIT;
            self.proposals.push(ToolCallProposal {
                id: id.clone(),
                server: call.server,
                tool: call.tool,
                args: call.args,
                status: if auto {
                    ProposalStatus::Approved
                } else {
                    ProposalStatus::Pending
                },
                auto_approved: auto,
                result: None,
            });
            let idx = self.proposals.len() - 1;
            if !auto {
                self.pending = Some(idx);
                self.emit(SessionEvent::ProposalPending {
                    proposal: self.proposals[idx].clone(),
                });
                return;
            }
            self.auto_runs += 1;
            self.emit(SessionEvent::ProposalApproved {
                proposal_id: id,
                auto: true,
            });
            self.execute(host, idx).await;
        }
    }
}
