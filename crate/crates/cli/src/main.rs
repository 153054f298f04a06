use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tracing_subscriber::EnvFilter;

use mia_client::{BlockingEmbedder, BlockingVictim, ClientOptions, EmbedClient, ServiceClient, VictimClient};
use mia_core::artifact::{load_artifact, Artifact};
use mia_core::config::{EmbedderSpec, PipelineConfig, VictimSpec, VICTIM_TOKEN_ENV};
use mia_core::perturb::Family;
use mia_core::pipeline::{self, PipelineError, SimulateOptions};
use mia_core::protocol::SimulateRequest;
use mia_core::stage::{local_embedder, run_stage, write_atomic, Services, Stage};

/// Membership inference audit for code completion models.
#[derive(Parser)]
#[command(name = "mia", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split a corpus JSONL into known and evaluation samples.
    Ingest(StageArgs),
    /// Generate 11 semantics-preserving variants per sample.
    Perturb(StageArgs),
    /// Query the victim with original and perturbed prefixes.
    Query(StageArgs),
    /// Build feature vectors from the victim's responses.
    Featurize(StageArgs),
    /// Train the membership classifier on the labeled features.
    Train(StageArgs),
    /// Predict membership for every featurized sample.
    Infer(StageArgs),
    /// Score predictions and the baselines on the evaluation split.
    Evaluate(StageArgs),
    /// Run every stage on a synthetic corpus against the simulated victim.
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct Common {
    /// Pipeline config (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Drop feature index (0-26) from the vector; repeatable.
    #[arg(long = "drop-feature", value_name = "INDEX")]
    drop_features: Vec<usize>,
    /// Drop a perturbation family (IDC, IRV, VR, IDP, IDL); repeatable.
    #[arg(long = "drop-family", value_name = "FAMILY")]
    drop_families: Vec<Family>,
    /// Override the concurrency limit for victim and embedder requests.
    #[arg(long)]
    concurrency: Option<usize>,
}

#[derive(Args)]
struct StageArgs {
    #[command(flatten)]
    common: Common,
    /// Input artifact; repeatable, any order.
    #[arg(long = "in", value_name = "PATH")]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Accept inputs produced under a different config.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 50)]
    members: usize,
    #[arg(long, default_value_t = 50)]
    nonmembers: usize,
    /// Let the simulated model memorize every sample.
    #[arg(long)]
    memorize_all: bool,
    /// Directory for the run's artifacts.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run on a mia-server instead of in-process.
    #[arg(long, value_name = "URL")]
    service: Option<String>,
}

#[derive(Debug)]
enum Failure {
    Validation(String),
    Dependency(String),
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e.exit_code() {
            1 => Failure::Validation(e.to_string()),
            _ => Failure::Dependency(e.to_string()),
        }
    }
}

fn load_config(common: &Common) -> Result<PipelineConfig, Failure> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))?;
            PipelineConfig::from_toml(&text).map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))?
        }
        None => PipelineConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(limit) = common.concurrency {
        cfg.concurrency_limit = limit;
    }
    cfg.mask.drop_features.extend(&common.drop_features);
    cfg.mask.drop_families.extend(&common.drop_families);
    cfg.validate().map_err(|e| Failure::Validation(e.to_string()))?;
    Ok(cfg)
}

fn client_options(cfg: &PipelineConfig, token: Option<String>) -> ClientOptions {
    ClientOptions { concurrency_limit: cfg.concurrency_limit, bearer_token: token, ..Default::default() }
}

fn run_stage_command(stage: Stage, args: StageArgs, rt: &tokio::runtime::Runtime) -> Result<(), Failure> {
    let cfg = load_config(&args.common)?;
    let victim = match &cfg.victim {
        VictimSpec::Remote { url } if stage == Stage::Query => {
            let token = std::env::var(VICTIM_TOKEN_ENV).ok();
            Some(BlockingVictim::new(VictimClient::new(url, client_options(&cfg, token)), rt.handle().clone()))
        }
        _ => None,
    };
    let embedder = match &cfg.embedder {
        EmbedderSpec::Remote { url } if stage == Stage::Featurize => Some(BlockingEmbedder::new(EmbedClient::new(url, client_options(&cfg, None)), rt.handle().clone())),
        _ => None,
    };
    let services = Services {
        victim: victim.as_ref().map(|v| v as &dyn mia_core::victim::Victim),
        embedder: embedder.as_ref().map(|e| e as &dyn mia_core::embed::Embedder),
    };
    let kind = run_stage(stage, &cfg, &args.inputs, &args.out, args.force, services)?;
    eprintln!("wrote {kind} to {}", args.out.display());
    if stage == Stage::Evaluate {
        print_summary(&args.out)?;
    }
    Ok(())
}

fn print_summary(report: &Path) -> Result<(), Failure> {
    let Artifact::Report(r) = load_artifact(report).map_err(|e| Failure::Dependency(e.to_string()))? else {
        return Err(Failure::Validation(format!("{} is not a report", report.display())));
    };
    let summary = serde_json::json!({
        "tpr": r.tpr,
        "fpr": r.fpr,
        "auc": r.auc,
        "baselines": r.baselines,
    });
    println!("{summary}");
    Ok(())
}

fn simulate(args: SimulateArgs, rt: &tokio::runtime::Runtime) -> Result<(), Failure> {
    let cfg = load_config(&args.common)?;
    let files: Vec<(String, String)> = match &args.service {
        Some(url) => {
            let req = SimulateRequest { config: cfg, n_members: args.members, n_nonmembers: args.nonmembers, memorize_all: args.memorize_all };
            let client = ServiceClient::new(url, ClientOptions::default());
            let resp = rt.block_on(client.simulate(&req)).map_err(|e| match e {
                mia_client::ClientError::Status { status: 400..=499, message, .. } => Failure::Validation(message),
                other => Failure::Dependency(other.to_string()),
            })?;
            resp.files.into_iter().collect()
        }
        None => {
            let embedder = local_embedder(&cfg).ok_or_else(|| Failure::Validation("simulate runs with the hash embedder only".into()))?;
            let options = SimulateOptions { n_members: args.members, n_nonmembers: args.nonmembers, memorize_all: args.memorize_all };
            pipeline::simulate(&cfg, options, &embedder)?.files().into_iter().map(|(n, b)| (n.to_string(), b)).collect()
        }
    };
    let dir = args.out.unwrap_or_else(|| PathBuf::from("mia-simulate"));
    for (name, body) in &files {
        write_atomic(&dir.join(name), body)?;
    }
    eprintln!("wrote {} artifacts to {}", files.len(), dir.display());
    print_summary(&dir.join("report.json"))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().expect("tokio runtime");
    let result = match cli.command {
        Command::Ingest(a) => run_stage_command(Stage::Ingest, a, &rt),
        Command::Perturb(a) => run_stage_command(Stage::Perturb, a, &rt),
        Command::Query(a) => run_stage_command(Stage::Query, a, &rt),
        Command::Featurize(a) => run_stage_command(Stage::Featurize, a, &rt),
        Command::Train(a) => run_stage_command(Stage::Train, a, &rt),
        Command::Infer(a) => run_stage_command(Stage::Infer, a, &rt),
        Command::Evaluate(a) => run_stage_command(Stage::Evaluate, a, &rt),
        Command::Simulate(a) => simulate(a, &rt),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Dependency(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
