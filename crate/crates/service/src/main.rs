use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;

use clap::Parser;
use spectro_service::{run, ServeOptions, CHECKPOINT_ENV};

/// Serve the inpainting API over HTTP.
#[derive(Parser)]
#[command(version)]
struct Args {
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: IpAddr,
    /// Checkpoint directory; falls back to $SPECTRO_CHECKPOINT_DIR.
    #[arg(long, env = CHECKPOINT_ENV)]
    checkpoints: Option<PathBuf>,
    /// Write sessions to this JSON file on shutdown.
    #[arg(long)]
    snapshot: Option<PathBuf>,
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .init();
    let args = Args::parse();
    run(ServeOptions {
        addr: SocketAddr::new(args.host, args.port),
        checkpoints: args.checkpoints,
        snapshot: args.snapshot,
    })
    .await
}
