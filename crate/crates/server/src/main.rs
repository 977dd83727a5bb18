use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use slicereg_core::dataset::Dataset;
use slicereg_core::session::Session;
use slicereg_server::{serve, AppState};

/// Serve a slice registration session over HTTP.
#[derive(Debug, Parser)]
#[command(version)]
struct Args {
    /// Dataset config (JSON). Without it, upload one via POST /api/config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// Directory with the built browser client.
    #[arg(long)]
    ui_dir: Option<PathBuf>,
}

#[tokio::main]
async fn main() -> ExitCode {
    let args = Args::parse();
    let session = match &args.config {
        Some(path) => match Dataset::from_config_file(path).and_then(Session::open) {
            Ok(s) => Some(s),
            Err(e) => {
                eprintln!("error: {}: {e}", path.display());
                return ExitCode::FAILURE;
            }
        },
        None => None,
    };
    if let Some(dir) = &args.ui_dir {
        if !dir.is_dir() {
            eprintln!("error: UI directory {} does not exist", dir.display());
            return ExitCode::FAILURE;
        }
    }
    let listener = match tokio::net::TcpListener::bind((args.host.as_str(), args.port)).await {
        Ok(l) => l,
        Err(e) => {
            eprintln!("error: cannot listen on {}:{}: {e}", args.host, args.port);
            return ExitCode::FAILURE;
        }
    };
    if let Ok(addr) = listener.local_addr() {
        eprintln!("listening on http://{addr}");
    }
    match serve(listener, AppState::new(session, args.ui_dir)).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
