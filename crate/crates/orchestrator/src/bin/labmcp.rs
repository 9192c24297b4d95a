//! `labmcp serve | run | validate`

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use labmcp_core::host::ToolRef;
use labmcp_core::{RunStatus, Workflow};
use labmcp_orchestrator::{api, run_headless, Orchestrator, OrchestratorConfig};
use labmcp_servers::{decision, fixture, simlab};
use serde_json::Value;

#[derive(Parser)]
#[command(name = "labmcp", version, about = "Lab orchestration over MCP tool servers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Start the HTTP API.
    Serve {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's bind address.
        #[arg(long)]
        bind: Option<SocketAddr>,
    },
    /// Execute a workflow headless and write its record to --out.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        workflow: PathBuf,
        #[arg(long, default_value = "labmcp-run")]
        out: PathBuf,
    },
    /// Check a workflow without running it. Without --config, tool references
    /// are checked against the bundled servers as simlab, nimo and fixture.
    Validate {
        #[arg(long)]
        workflow: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

enum Failure {
    /// The command ran and the answer is no.
    Negative,
    /// Inputs could not be read.
    Usage(String),
}

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(e.to_string())
}

fn read_json(path: &Path) -> Result<Value, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| usage(format!("{} is not valid JSON: {e}", path.display())))
}

fn load_config(path: &Path) -> Result<OrchestratorConfig, Failure> {
    OrchestratorConfig::load(path).map_err(usage)
}

fn bundled_catalog() -> Vec<ToolRef> {
    [
        ("simlab", simlab::descriptors()),
        ("nimo", decision::descriptors()),
        ("fixture", fixture::descriptors()),
    ]
    .into_iter()
    .flat_map(|(alias, descs)| {
        descs.into_iter().map(move |d| ToolRef {
            server_alias: alias.to_owned(),
            tool_name: d.name.clone(),
            descriptor: d,
        })
    })
    .collect()
}

fn report_servers(orch: &Orchestrator) {
    for s in orch.servers() {
        match &s.error {
            Some(e) => eprintln!("server {}: {:?} ({e})", s.alias, s.status),
            None => eprintln!("server {}: {:?}, {} tools", s.alias, s.status, s.tool_count),
        }
    }
}

async fn serve(config: PathBuf, bind: Option<SocketAddr>) -> Result<(), Failure> {
    let cfg = load_config(&config)?;
    let addr = bind.unwrap_or(cfg.bind);
    let orch = Orchestrator::start(cfg).await.map_err(usage)?;
    report_servers(&orch);
    api::serve(orch, addr, async {
        let _ = tokio::signal::ctrl_c().await;
    })
    .await
    .map_err(usage)
}

async fn run(config: PathBuf, workflow: PathBuf, out: PathBuf) -> Result<(), Failure> {
    let doc = read_json(&workflow)?;
    let cfg = load_config(&config)?;
    let orch = Orchestrator::start(cfg).await.map_err(usage)?;
    report_servers(&orch);
    let (state, events) = match run_headless(&orch, &doc, &out).await {
        Ok(r) => r,
        Err(labmcp_orchestrator::service::RunHeadlessError::Invalid(e)) => {
            for issue in e.issues() {
                eprintln!("{issue}");
            }
            return Err(Failure::Negative);
        }
        Err(e) => return Err(usage(e)),
    };
    println!(
        "{} {:?}: {} events in {}",
        state.run_id,
        state.status,
        events.len(),
        out.join(labmcp_orchestrator::record::EVENTS_FILE).display()
    );
    if let Some(e) = &state.error {
        eprintln!("error: {e}");
    }
    match state.status {
        RunStatus::Succeeded => Ok(()),
        _ => Err(Failure::Negative),
    }
}

async fn validate(workflow: PathBuf, config: Option<PathBuf>) -> Result<(), Failure> {
    let doc = read_json(&workflow)?;
    let issues = match config {
        Some(c) => {
            let orch = Orchestrator::start(load_config(&c)?).await.map_err(usage)?;
            orch.validate(&doc).issues
        }
        None => match Workflow::from_value(&doc) {
            Ok(wf) => wf.validate(&bundled_catalog()).err().unwrap_or_default(),
            Err(e) => e.issues(),
        },
    };
    if issues.is_empty() {
        println!("{}: valid", workflow.display());
        return Ok(());
    }
    for issue in &issues {
        println!("{issue}");
    }
    Err(Failure::Negative)
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Serve { config, bind } => serve(config, bind).await,
        Command::Run { config, workflow, out } => run(config, workflow, out).await,
        Command::Validate { workflow, config } => validate(workflow, config).await,
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Negative) => ExitCode::from(1),
        Err(Failure::Usage(m)) => {
            eprintln!("labmcp: {m}");
            ExitCode::from(2)
        }
    }
}
