//! Counting fixture server used by tests and demos.

use clap::Parser;
use labmcp_protocol::server::{self, ServeArgs};
use labmcp_servers::fixture;

#[derive(Parser)]
#[command(about = "Fixture MCP server with call counters and object-typed tools")]
struct Cli {
    #[command(flatten)]
    serve: ServeArgs,
}

#[tokio::main(flavor = "current_thread")]
async fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let (server, _) = fixture::server()?;
    server::run(server, &cli.serve).await?;
    Ok(())
}
