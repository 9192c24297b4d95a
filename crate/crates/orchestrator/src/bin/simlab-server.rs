//! Simulated color-mixing lab as an MCP server.

use std::path::PathBuf;

use anyhow::Context;
use clap::Parser;
use labmcp_protocol::server::{self, ServeArgs};
use labmcp_servers::simlab::{self, DyeModel, NoiseConfig, SimLabConfig};

#[derive(Parser)]
#[command(about = "Simulated dye-mixing plate served over MCP")]
struct Cli {
    #[command(flatten)]
    serve: ServeArgs,
    /// Per-channel Gaussian noise added to measurements (linear RGB).
    #[arg(long, default_value_t = 0.0)]
    noise_stddev: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON file with optical-density triples: {"red":[..],"yellow":[..],"blue":[..]}.
    #[arg(long)]
    dye_config: Option<PathBuf>,
}

#[tokio::main(flavor = "current_thread")]
async fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let dyes = match &cli.dye_config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str::<DyeModel>(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => DyeModel::default(),
    };
    let config = SimLabConfig {
        dyes,
        noise: NoiseConfig {
            stddev: cli.noise_stddev,
            seed: cli.seed,
        },
    };
    let (server, _) = simlab::server(config)?;
    server::run(server, &cli.serve).await?;
    Ok(())
}
