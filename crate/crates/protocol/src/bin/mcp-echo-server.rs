//! Minimal fixture server: `echo`, `add`, and a `fail` tool that panics.

use clap::Parser;
use labmcp_protocol::server::{self, ServeArgs};
use labmcp_protocol::{InputSchema, PropertySchema, ServerIdentity, ToolCallResult, ToolDescriptor, ToolServer};

#[derive(Parser)]
#[command(about = "Echo MCP server used in protocol tests")]
struct Cli {
    #[command(flatten)]
    serve: ServeArgs,
}

#[tokio::main(flavor = "current_thread")]
async fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let server = ToolServer::new(ServerIdentity::new("echo", env!("CARGO_PKG_VERSION")))?
        .with_tool(
            ToolDescriptor::new(
                "echo",
                "Return the given text",
                InputSchema::new().property("text", PropertySchema::string(), true),
            ),
            |args| ToolCallResult::text(args["text"].as_str().unwrap_or_default()),
        )?
        .with_tool(
            ToolDescriptor::new(
                "add",
                "Add two numbers",
                InputSchema::new()
                    .property("a", PropertySchema::number(), true)
                    .property("b", PropertySchema::number(), true),
            ),
            |args| {
                let sum = args["a"].as_f64().unwrap_or(0.0) + args["b"].as_f64().unwrap_or(0.0);
                ToolCallResult::text(format!("sum = {sum}"))
            },
        )?
        .with_tool(
            ToolDescriptor::new("fail", "Always fails", InputSchema::new()),
            |_| panic!("requested failure"),
        )?;
    server::run(server, &cli.serve).await?;
    Ok(())
}
