use std::net::SocketAddr;
use std::path::PathBuf;

use anyhow::Context;
use clap::Parser;
use tracing_subscriber::EnvFilter;

use mia_core::config::{PipelineConfig, VictimSpec};
use mia_core::corpus::ingest;
use mia_core::victim::SimVictimConfig;
use mia_server::{serve, AppState};

/// Serves the simulated victim, the hash embedder and the pipeline operations over HTTP.
#[derive(Parser)]
#[command(version)]
struct Args {
    #[arg(long, default_value = "127.0.0.1:8080")]
    listen: SocketAddr,
    /// Pipeline config; supplies the seed and simulator parameters.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Corpus JSONL the simulated victim answers for. Without it only the
    /// embedder and pipeline endpoints are live.
    #[arg(long)]
    corpus: Option<PathBuf>,
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt().with_env_filter(EnvFilter::from_default_env()).with_writer(std::io::stderr).init();
    let args = Args::parse();
    let config = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            PipelineConfig::from_toml(&text)?
        }
        None => PipelineConfig::default(),
    };
    let mut state = AppState::new(config.seed);
    if let Some(path) = &args.corpus {
        let corpus = ingest(path)?;
        let VictimSpec::Simulator(sim) = &config.victim else {
            anyhow::bail!("--corpus needs a simulator victim in the config");
        };
        let victim = SimVictimConfig {
            memorized_ids: sim.memorized.iter().flatten().cloned().collect(),
            member_noise: sim.member_noise,
            nonmember_noise: sim.nonmember_noise,
            member_logprob: sim.member_logprob,
            nonmember_logprob: sim.nonmember_logprob,
            jitter: sim.jitter,
            seed: config.seed,
        };
        state = state.with_simulator(victim, &corpus)?;
        tracing::info!(samples = corpus.len(), "simulated victim loaded");
    }
    let listener = tokio::net::TcpListener::bind(args.listen).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    serve(listener, state).await?;
    Ok(())
}
