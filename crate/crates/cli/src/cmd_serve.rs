use std::io::Write;
use std::path::PathBuf;

use clap::Args;

use geonca_session::{serve, ServerConfig};

use crate::config::RunConfig;
use crate::error::{usage, CliError, CliResult};

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Directory of checkpoints offered to clients.
    #[arg(long)]
    checkpoints: PathBuf,
    /// Dataset whose samples clients may load.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    host: Option<String>,
    /// 0 picks a free port; the bound address is printed either way.
    #[arg(long)]
    port: Option<u16>,
    /// Highest play rate a client may request, in steps per second.
    #[arg(long)]
    rate_cap: Option<f64>,
    #[arg(long)]
    max_sessions: Option<usize>,
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
    log::info!("shutting down");
}

pub fn run(args: ServeArgs, mut cfg: RunConfig, threads: Option<usize>) -> CliResult<()> {
    let s = &mut cfg.serve;
    if let Some(v) = args.host.clone() {
        s.host = v;
    }
    if let Some(v) = args.port {
        s.port = v;
    }
    if let Some(v) = args.rate_cap {
        s.rate_cap = v;
    }
    if let Some(v) = args.max_sessions {
        s.max_sessions = v;
    }
    if !(s.rate_cap > 0.0) || s.max_sessions == 0 {
        return Err(usage("--rate-cap and --max-sessions must be positive"));
    }
    if !args.checkpoints.is_dir() {
        return Err(usage(format!("{} is not a directory", args.checkpoints.display())));
    }
    log::info!("effective config:\n{}", cfg.to_toml());
    let s = &cfg.serve;
    let server = ServerConfig {
        checkpoint_dir: args.checkpoints.clone(),
        dataset: args.data.clone(),
        rate_cap: s.rate_cap,
        max_sessions: s.max_sessions,
        frame_queue: s.frame_queue,
        diameter_ratio: s.diameter_ratio,
    };
    let mut rt = tokio::runtime::Builder::new_multi_thread();
    if let Some(n) = threads {
        rt.worker_threads(n);
    }
    let rt = rt.enable_all().build().map_err(|e| CliError::Env(e.to_string()))?;
    let addr = format!("{}:{}", s.host, s.port);
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .map_err(|e| CliError::Env(format!("cannot bind {addr}: {e}")))?;
        let bound = listener.local_addr().map_err(|e| CliError::Env(e.to_string()))?;
        println!("listening on http://{bound}");
        let _ = std::io::stdout().flush();
        serve(listener, server, shutdown_signal()).await.map_err(|e| CliError::Data(e.to_string()))
    })
}
