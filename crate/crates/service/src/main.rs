use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use ground_service::{serve, AppState, Artifacts};
use tracing_subscriber::EnvFilter;

/// Serve trained grounding models over HTTP.
#[derive(Debug, Parser)]
#[command(name = "ground-service", version)]
struct Args {
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    /// Directory of `<page_id>.json` snapshots.
    #[arg(long)]
    snapshots: PathBuf,
    /// Embedding or alignment checkpoint; repeat for several.
    #[arg(long)]
    checkpoint: Vec<PathBuf>,
    /// Document-frequency table for the retrieval model.
    #[arg(long)]
    df: Option<PathBuf>,
    /// Static playground files, served under /ui.
    #[arg(long)]
    ui: Option<PathBuf>,
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .init();
    let args = Args::parse();
    let artifacts = Artifacts {
        snapshots: args.snapshots,
        checkpoints: args.checkpoint,
        df: args.df,
        ..Artifacts::default()
    };
    let state = match AppState::load(&artifacts) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    match serve(args.addr, state, args.ui).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
