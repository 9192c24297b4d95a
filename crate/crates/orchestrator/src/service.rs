//! The orchestrator: server registry, run store with hardware exclusivity,
//! and chat sessions.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use labmcp_core::agent::{
    AgentError, BackendReply, ChatCompletionsBackend, ChatSession, Decision, LlmBackend,
    ScriptedBackend, SessionEventRecord,
};
use labmcp_core::workflow::Issue;
use labmcp_core::{
    execute, generate_toolbox, EventLog, ExecutionEvent, Host, RunControl, RunState, RunStatus,
    ServerRegistration, ToolboxDocument, Workflow, WorkflowError,
};
use labmcp_protocol::server::spawn_in_process;
use labmcp_servers::decision::{self, DecisionState};
use parking_lot::Mutex;
use serde::Serialize;
use serde_json::Value;
use thiserror::Error;
use tokio::sync::watch;

use crate::config::OrchestratorConfig;
use crate::record::RunWriter;

pub const RUNS_DIR: &str = "runs";

#[derive(Debug, Error)]
pub enum StartError {
    #[error("cannot start the built-in decision server: {0}")]
    DecisionServer(String),
    #[error(transparent)]
    Host(#[from] labmcp_core::HostError),
}

#[derive(Debug, Error)]
pub enum SubmitError {
    #[error("{0}")]
    Invalid(WorkflowError),
    #[error("server {alias} is busy with run {run_id}")]
    Busy { alias: String, run_id: String },
}

#[derive(Debug, Error)]
pub enum ChatError {
    #[error("unknown chat session {0}")]
    UnknownSession(String),
    #[error(transparent)]
    Agent(#[from] AgentError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub valid: bool,
    pub issues: Vec<Issue>,
}

pub struct RunRecord {
    pub run_id: String,
    pub workflow: Value,
    pub log: EventLog<ExecutionEvent>,
    pub dir: Option<PathBuf>,
    control: RunControl,
    status: watch::Sender<RunStatus>,
}

impl RunRecord {
    pub fn status(&self) -> RunStatus {
        *self.status.borrow()
    }

    pub fn cancel(&self) {
        self.control.cancel();
    }

    pub async fn wait(&self) -> RunStatus {
        let mut rx = self.status.subscribe();
        let status = *rx.wait_for(|s| s.is_terminal()).await.expect("sender lives in the record");
        status
    }
}

#[derive(Default)]
struct RunTable {
    records: HashMap<String, Arc<RunRecord>>,
    busy: HashMap<String, String>,
    next: u64,
}

struct ChatEntry {
    session: tokio::sync::Mutex<ChatSession>,
    log: EventLog<SessionEventRecord>,
}

pub struct Orchestrator {
    config: OrchestratorConfig,
    host: Host,
    backend: Arc<dyn LlmBackend>,
    runs: Mutex<RunTable>,
    chats: Mutex<BTreeMap<String, Arc<ChatEntry>>>,
}

/// Backend used when no language model is configured.
pub fn offline_backend() -> ScriptedBackend {
    ScriptedBackend::default().with_fallback(|_| {
        Ok(BackendReply::text(
            "No language model is configured. Set LABMCP_LLM_URL to enable the assistant.",
        ))
    })
}

pub fn default_backend() -> Arc<dyn LlmBackend> {
    match ChatCompletionsBackend::from_env() {
        Some(b) => Arc::new(b),
        None => Arc::new(offline_backend()),
    }
}

/// Run ids are sequential: run-0001, run-0002, ...
pub fn run_id(n: u64) -> String {
    format!("run-{n:04}")
}

/// Executes `wf`, appending every event to `log` and, when given, to the
/// on-disk record. Shared by the HTTP and headless paths.
pub async fn execute_recorded(
    wf: &Workflow,
    host: &Host,
    run_id: &str,
    control: &RunControl,
    log: &EventLog<ExecutionEvent>,
    mut writer: Option<RunWriter>,
) -> RunState {
    let mut sink = |event: ExecutionEvent| {
        if let Some(w) = writer.as_mut() {
            if let Err(e) = w.append(&event) {
                tracing::warn!(run_id = %event.run_id, "cannot persist event: {e}");
            }
        }
        log.push(event);
    };
    let state = execute(wf, host, run_id, control, &mut sink).await;
    log.close();
    state
}

impl Orchestrator {
    /// Registers every configured server. Registration failures are recorded
    /// in the registry and do not stop the service.
    pub async fn start(config: OrchestratorConfig) -> Result<Arc<Self>, StartError> {
        Self::start_with_backend(config, default_backend()).await
    }

    pub async fn start_with_backend(
        config: OrchestratorConfig,
        backend: Arc<dyn LlmBackend>,
    ) -> Result<Arc<Self>, StartError> {
        let host = Host::new();
        if config.needs_builtin_decision_server() {
            let (server, _) = decision::server(DecisionState::new())
                .map_err(|e| StartError::DecisionServer(e.to_string()))?;
            host.register_connection(&config.decision_alias, spawn_in_process(server))
                .await?;
        }
        for s in &config.servers {
            host.register_server(&s.alias, s.transport.clone()).await?;
        }
        Ok(Arc::new(Self {
            config,
            host,
            backend,
            runs: Mutex::new(RunTable::default()),
            chats: Mutex::new(BTreeMap::new()),
        }))
    }

    pub fn config(&self) -> &OrchestratorConfig {
        &self.config
    }

    pub fn host(&self) -> &Host {
        &self.host
    }

    pub fn servers(&self) -> Vec<ServerRegistration> {
        self.host.servers()
    }

    pub fn toolbox(&self) -> ToolboxDocument {
        let catalog = self.host.list_tools(None).unwrap_or_default();
        generate_toolbox(&catalog, &self.config.decision_alias)
    }

    pub fn parse(&self, doc: &Value) -> Result<Workflow, WorkflowError> {
        let wf = Workflow::from_value(doc)?;
        let catalog = self.host.list_tools(None).unwrap_or_default();
        wf.validate(&catalog).map_err(WorkflowError::Invalid)?;
        Ok(wf)
    }

    pub fn validate(&self, doc: &Value) -> ValidationReport {
        match self.parse(doc) {
            Ok(_) => ValidationReport {
                valid: true,
                issues: Vec::new(),
            },
            Err(e) => ValidationReport {
                valid: false,
                issues: e.issues(),
            },
        }
    }

    fn runs_dir(&self) -> PathBuf {
        self.config.data_dir.join(RUNS_DIR)
    }

    /// Validates and starts a run. At most one run may use a server alias at
    /// a time.
    pub fn submit_run(self: &Arc<Self>, doc: &Value) -> Result<Arc<RunRecord>, SubmitError> {
        let wf = self.parse(doc).map_err(SubmitError::Invalid)?;
        let aliases = wf.servers();
        let record = {
            let mut table = self.runs.lock();
            if let Some((alias, run_id)) = aliases
                .iter()
                .find_map(|a| table.busy.get(a).map(|r| (a.clone(), r.clone())))
            {
                return Err(SubmitError::Busy { alias, run_id });
            }
            let id = loop {
                table.next += 1;
                let id = run_id(table.next);
                if !self.runs_dir().join(&id).exists() {
                    break id;
                }
            };
            for a in &aliases {
                table.busy.insert(a.clone(), id.clone());
            }
            let (status, _) = watch::channel(RunStatus::Running);
            let record = Arc::new(RunRecord {
                run_id: id.clone(),
                workflow: doc.clone(),
                log: EventLog::new(),
                dir: Some(self.runs_dir().join(&id)),
                control: RunControl::new(),
                status,
            });
            table.records.insert(id, record.clone());
            record
        };

        let this = self.clone();
        let rec = record.clone();
        tokio::spawn(async move {
            let writer = rec.dir.as_deref().and_then(|dir| match RunWriter::create(dir, &rec.workflow) {
                Ok(w) => Some(w),
                Err(e) => {
                    tracing::warn!(run_id = %rec.run_id, "cannot create run directory: {e}");
                    None
                }
            });
            let state = execute_recorded(&wf, &this.host, &rec.run_id, &rec.control, &rec.log, writer).await;
            {
                let mut table = this.runs.lock();
                table.busy.retain(|_, r| r != &rec.run_id);
            }
            rec.status.send_replace(state.status);
        });
        Ok(record)
    }

    pub fn run(&self, run_id: &str) -> Option<Arc<RunRecord>> {
        self.runs.lock().records.get(run_id).cloned()
    }

    /// Whether `run_id` exists; cancellation itself is asynchronous.
    pub fn cancel(&self, run_id: &str) -> bool {
        match self.run(run_id) {
            Some(r) => {
                r.cancel();
                true
            }
            None => false,
        }
    }

    fn chat_entry(&self, session_id: &str, create: bool) -> Option<Arc<ChatEntry>> {
        let mut chats = self.chats.lock();
        if let Some(e) = chats.get(session_id) {
            return Some(e.clone());
        }
        if !create {
            return None;
        }
        let session = ChatSession::new(session_id);
        let entry = Arc::new(ChatEntry {
            log: session.log().clone(),
            session: tokio::sync::Mutex::new(session),
        });
        chats.insert(session_id.to_owned(), entry.clone());
        Some(entry)
    }

    /// Event log of a session, creating the session if needed.
    pub fn chat_log(&self, session_id: &str) -> EventLog<SessionEventRecord> {
        self.chat_entry(session_id, true).expect("created").log.clone()
    }

    pub async fn chat(&self, session_id: &str, text: &str) -> Result<Vec<SessionEventRecord>, ChatError> {
        let entry = self.chat_entry(session_id, true).expect("created");
        let mut session = entry.session.lock().await;
        Ok(session.chat_turn(&self.host, self.backend.as_ref(), text).await?)
    }

    pub async fn resolve(
        &self,
        session_id: &str,
        proposal_id: &str,
        decision: Decision,
    ) -> Result<Vec<SessionEventRecord>, ChatError> {
        let entry = self
            .chat_entry(session_id, false)
            .ok_or_else(|| ChatError::UnknownSession(session_id.to_owned()))?;
        let mut session = entry.session.lock().await;
        Ok(session
            .resolve(&self.host, self.backend.as_ref(), proposal_id, decision)
            .await?)
    }

    pub async fn set_auto_approve(&self, session_id: &str, enabled: bool) -> Vec<SessionEventRecord> {
        let entry = self.chat_entry(session_id, true).expect("created");
        let mut session = entry.session.lock().await;
        let start = entry.log.len();
        session.set_auto_approve(enabled);
        entry.log.snapshot().split_off(start)
    }
}

/// Executes one workflow document outside the service, writing its record
/// to `out`. Used by the `run` subcommand.
pub async fn run_headless(
    orch: &Orchestrator,
    doc: &Value,
    out: &Path,
) -> Result<(RunState, Vec<ExecutionEvent>), RunHeadlessError> {
    let wf = orch.parse(doc).map_err(RunHeadlessError::Invalid)?;
    let writer = RunWriter::create(out, doc).map_err(RunHeadlessError::Io)?;
    let log = EventLog::new();
    let state = execute_recorded(&wf, orch.host(), &run_id(1), &RunControl::new(), &log, Some(writer)).await;
    Ok((state, log.snapshot()))
}

#[derive(Debug, Error)]
pub enum RunHeadlessError {
    #[error("{0}")]
    Invalid(WorkflowError),
    #[error("cannot write run output: {0}")]
    Io(std::io::Error),
}
