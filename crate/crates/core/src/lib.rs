//! Orchestration core: the MCP host registry, block workflows and their
//! interpreter, toolbox generation, and approval-gated agent sessions.

pub mod agent;
pub mod eventlog;
pub mod host;
pub mod toolbox;
pub mod workflow;

pub use eventlog::EventLog;
pub use host::{Host, HostError, ServerRegistration, ServerStatus, ToolRef};
pub use toolbox::{generate_toolbox, ToolboxDocument};
pub use workflow::{
    execute, parse_workflow, EventKind, ExecutionEvent, RunControl, RunState, RunStatus, Workflow,
    WorkflowError,
};
