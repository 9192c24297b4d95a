//! The orchestrator service: configuration-driven server registration, the
//! HTTP/SSE API, and the headless run path used by the `labmcp` CLI.

pub mod api;
pub mod config;
pub mod record;
pub mod service;

pub use config::{OrchestratorConfig, ServerEntry};
pub use service::{run_headless, Orchestrator, RunRecord, SubmitError};
