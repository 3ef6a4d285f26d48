use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use hushhub::config::load_config;
use hushhub::net::{serve, ServerOptions};
use tokio::sync::mpsc;

/// WebSocket relay for proximity voice with private channels.
#[derive(Debug, Parser)]
#[command(name = "hushhub-server", version)]
struct Args {
    /// Address to bind, overriding the config file.
    #[arg(long)]
    listen: Option<String>,
    /// TOML config file. A missing file means defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// off, error, warn, info, debug or trace.
    #[arg(long)]
    log_level: Option<String>,
}

#[tokio::main]
async fn main() -> ExitCode {
    let args = Args::parse();
    let mut config = match load_config(args.config.as_deref()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("hushhub-server: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(listen) = args.listen {
        config.listen = listen;
    }
    if let Some(level) = args.log_level {
        config.log_level = level;
    }
    if let Err(e) = config.validate() {
        eprintln!("hushhub-server: {e}");
        return ExitCode::from(2);
    }
    env_logger::Builder::new()
        .parse_filters(&config.log_level)
        .target(env_logger::Target::Stderr)
        .init();
    if let Some(path) = args.config.as_deref().filter(|p| !p.exists()) {
        log::warn!("config {} not found, using defaults", path.display());
    }

    // Event lines go to stdout as JSON, one per line.
    let (events, mut rx) = mpsc::unbounded_channel();
    tokio::spawn(async move {
        while let Some(event) = rx.recv().await {
            println!("{}", serde_json::to_string(&event).expect("events serialize"));
        }
    });

    let handle = match serve(&config, ServerOptions { events: Some(events), ..Default::default() }).await {
        Ok(h) => h,
        Err(e) => {
            eprintln!("hushhub-server: cannot listen on {}: {e}", config.listen);
            return ExitCode::FAILURE;
        }
    };
    let rooms: Vec<&str> = config.rooms.iter().map(|r| r.room_id.as_str()).collect();
    log::info!("listening on {} with rooms {}", handle.local_addr(), rooms.join(", "));
    println!("{}", serde_json::json!({ "listening": handle.local_addr().to_string() }));

    tokio::select! {
        _ = handle.wait() => ExitCode::FAILURE,
        _ = tokio::signal::ctrl_c() => {
            log::info!("shutting down");
            ExitCode::SUCCESS
        }
    }
}
