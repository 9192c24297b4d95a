//! Candidate selection (random exploration or Bayesian optimization) as an
//! MCP server.

use std::path::PathBuf;

use anyhow::Context;
use clap::Parser;
use labmcp_protocol::server::{self, ServeArgs};
use labmcp_servers::decision::{self, DecisionState};

#[derive(Parser)]
#[command(about = "Decision server: candidate tables, RE/BO selection, history")]
struct Cli {
    #[command(flatten)]
    serve: ServeArgs,
    /// CSV candidates table to load at startup.
    #[arg(long)]
    candidates: Option<PathBuf>,
}

#[tokio::main(flavor = "current_thread")]
async fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let mut state = DecisionState::new();
    if let Some(p) = &cli.candidates {
        let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        state.load(&text).with_context(|| format!("loading {}", p.display()))?;
    }
    let (server, _) = decision::server(state)?;
    server::run(server, &cli.serve).await?;
    Ok(())
}
