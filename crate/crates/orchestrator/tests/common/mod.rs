#![allow(dead_code)]

pub mod wire;

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use labmcp_core::agent::LlmBackend;
use labmcp_core::ExecutionEvent;
use labmcp_orchestrator::service::offline_backend;
use labmcp_orchestrator::{api, Orchestrator, OrchestratorConfig, ServerEntry};
use labmcp_protocol::server::spawn_in_process;
use labmcp_protocol::TransportConfig;
use labmcp_servers::fixture::{self, Counters};
use serde_json::{json, Value};
use tokio::task::JoinHandle;

pub const FX: &str = "fx";

pub fn simlab_bin() -> &'static str {
    env!("CARGO_BIN_EXE_simlab-server")
}

pub fn decision_bin() -> &'static str {
    env!("CARGO_BIN_EXE_decision-server")
}

pub fn labmcp_bin() -> &'static str {
    env!("CARGO_BIN_EXE_labmcp")
}

pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn color_workflow() -> Value {
    let text = std::fs::read_to_string(fixtures_dir().join("color_matching.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

/// Config spawning the bundled sim-lab and decision executables over stdio.
pub fn lab_config(data_dir: &Path) -> OrchestratorConfig {
    OrchestratorConfig {
        servers: vec![
            ServerEntry {
                alias: "simlab".into(),
                transport: TransportConfig::stdio(simlab_bin(), Vec::<String>::new()),
            },
            ServerEntry {
                alias: "nimo".into(),
                transport: TransportConfig::stdio(decision_bin(), Vec::<String>::new()),
            },
        ],
        data_dir: data_dir.to_owned(),
        ..OrchestratorConfig::default()
    }
}

pub fn write_lab_config(dir: &Path) -> PathBuf {
    let mut cfg = lab_config(&dir.join("data"));
    cfg.data_dir = "data".into();
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

pub struct Service {
    pub orch: Arc<Orchestrator>,
    pub addr: SocketAddr,
    pub client: reqwest::Client,
    task: JoinHandle<()>,
}

impl Drop for Service {
    fn drop(&mut self) {
        self.task.abort();
    }
}

impl Service {
    pub async fn start(cfg: OrchestratorConfig) -> Self {
        Self::start_with_backend(cfg, Arc::new(offline_backend())).await
    }

    pub async fn start_with_backend(cfg: OrchestratorConfig, backend: Arc<dyn LlmBackend>) -> Self {
        let orch = Orchestrator::start_with_backend(cfg, backend).await.unwrap();
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap();
        let router = api::router(orch.clone());
        let task = tokio::spawn(async move {
            axum::serve(listener, router).await.unwrap();
        });
        Self {
            orch,
            addr,
            client: reqwest::Client::new(),
            task,
        }
    }

    pub async fn add_fixture(&self, alias: &str) -> Arc<Counters> {
        let (server, counters) = fixture::server().unwrap();
        self.orch
            .host()
            .register_connection(alias, spawn_in_process(server))
            .await
            .unwrap();
        counters
    }

    pub fn url(&self, path: &str) -> String {
        format!("http://{}{path}", self.addr)
    }

    pub async fn get(&self, path: &str) -> (u16, Value) {
        let r = self.client.get(self.url(path)).send().await.unwrap();
        let status = r.status().as_u16();
        (status, r.json().await.unwrap_or(Value::Null))
    }

    pub async fn post(&self, path: &str, body: &Value) -> (u16, Value) {
        self.post_raw(path, body.to_string()).await
    }

    pub async fn post_raw(&self, path: &str, body: String) -> (u16, Value) {
        let r = self
            .client
            .post(self.url(path))
            .header("content-type", "application/json")
            .body(body)
            .send()
            .await
            .unwrap();
        let status = r.status().as_u16();
        (status, r.json().await.unwrap_or(Value::Null))
    }

    pub async fn submit(&self, wf: &Value) -> String {
        let (status, body) = self.post("/workflows/run", wf).await;
        assert_eq!(status, 200, "{body}");
        body["run_id"].as_str().unwrap().to_owned()
    }

    /// Reads an event stream to its end.
    pub async fn stream(&self, path: &str) -> (u16, Vec<SseFrame>) {
        let r = self.client.get(self.url(path)).send().await.unwrap();
        let status = r.status().as_u16();
        (status, parse_sse(&r.text().await.unwrap()))
    }

    pub async fn run_events(&self, run_id: &str) -> Vec<ExecutionEvent> {
        let (status, frames) = self.stream(&format!("/runs/{run_id}/events")).await;
        assert_eq!(status, 200);
        frames
            .iter()
            .map(|f| serde_json::from_str(&f.data).unwrap())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SseFrame {
    pub id: Option<String>,
    pub event: Option<String>,
    pub data: String,
}

pub fn parse_sse(text: &str) -> Vec<SseFrame> {
    let mut frames = Vec::new();
    for chunk in text.split("\n\n") {
        let mut frame = SseFrame {
            id: None,
            event: None,
            data: String::new(),
        };
        let mut has_data = false;
        for line in chunk.lines() {
            if let Some(v) = line.strip_prefix("data:") {
                if has_data {
                    frame.data.push('\n');
                }
                frame.data.push_str(v.strip_prefix(' ').unwrap_or(v));
                has_data = true;
            } else if let Some(v) = line.strip_prefix("id:") {
                frame.id = Some(v.trim().to_owned());
            } else if let Some(v) = line.strip_prefix("event:") {
                frame.event = Some(v.trim().to_owned());
            }
        }
        if has_data {
            frames.push(frame);
        }
    }
    frames
}

pub fn tick(id: &str) -> Value {
    json!({"id": id, "kind": "tool_call", "server": FX, "tool": "tick"})
}

pub fn sleep(id: &str, ms: u64) -> Value {
    json!({"id": id, "kind": "tool_call", "server": FX, "tool": "sleep", "args": {"ms": ms}})
}

pub fn nested_repeat() -> Value {
    json!({"version": 1, "blocks": [
        {"id": "outer", "kind": "repeat", "count": 3, "body": [
            {"id": "inner", "kind": "repeat", "count": 2, "body": [tick("t")]}
        ]}
    ]})
}

pub fn slow_workflow(steps: usize, ms: u64) -> Value {
    json!({"version": 1, "blocks": [
        {"id": "loop", "kind": "repeat", "count": steps, "body": [sleep("nap", ms)]}
    ]})
}

pub fn stripped(events: &[ExecutionEvent]) -> Vec<ExecutionEvent> {
    events.iter().map(ExecutionEvent::without_timestamp).collect()
}
