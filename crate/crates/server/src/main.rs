use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use clap::Parser;
use tracing_subscriber::EnvFilter;

use tutee_core::llm_gateway::BackendChoice;
use tutee_server::{App, Clock, SessionConfig, Store};

#[derive(Debug, Parser)]
#[command(name = "tutee-server", about = "Serve tutoring sessions over HTTP")]
struct Args {
    /// Directory of session config files.
    #[arg(long, default_value = "data/config")]
    configs: PathBuf,
    /// Config used when a create request names none.
    #[arg(long)]
    default_config: Option<String>,
    /// Where session logs are kept.
    #[arg(long, default_value = "sessions")]
    store: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    /// live, scripted, or replay:<cassette>
    #[arg(long, default_value = "scripted")]
    backend: BackendChoice,
    #[arg(long, value_enum, default_value = "system")]
    clock: ClockArg,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum ClockArg {
    Logical,
    System,
}

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .init();
    let args = Args::parse();
    let configs = SessionConfig::load_dir(&args.configs)?;
    let backend = args.backend.build()?;
    let clock = match args.clock {
        ClockArg::Logical => Clock::Logical,
        ClockArg::System => Clock::System,
    };
    let app = Arc::new(App::new(configs, args.default_config, backend, Some(Store::open(&args.store)?), clock)?);
    let listener = tokio::net::TcpListener::bind(args.addr).await?;
    tracing::info!(addr = %args.addr, "listening");
    axum::serve(listener, app.router())
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
