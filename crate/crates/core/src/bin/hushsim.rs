use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hushhub::sim::{fuzz, leak_scan, oracle_recipients, run_scenario, FuzzBounds, Mode, OracleState, Scenario};
use hushhub::FaultInjection;

/// Scenario runner, fuzzer and audibility oracle.
#[derive(Debug, Parser)]
#[command(name = "hushsim", version)]
struct Args {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Run a scenario and print its transcript as JSON.
    Run {
        scenario: PathBuf,
        /// Drive a running server at host:port instead of an in-process relay.
        #[arg(long)]
        live: Option<String>,
        /// Write the transcript here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate and check seeded scenarios.
    Fuzz {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        count: usize,
        #[arg(long, default_value_t = 8)]
        max_users: usize,
        #[arg(long, default_value_t = 4)]
        max_channels: u32,
        #[arg(long, default_value_t = 40)]
        max_actions: usize,
        /// On failure, write the shrunk scenario here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print who hears `speaker` in a state file.
    Oracle {
        state: PathBuf,
        #[arg(long)]
        speaker: String,
    },
}

/// Prints to stdout, tolerating a closed pipe.
fn emit(text: &str) {
    let _ = writeln!(io::stdout(), "{text}");
}

fn read(path: &PathBuf) -> Result<String, String> {
    fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn run(cmd: Cmd) -> Result<bool, String> {
    match cmd {
        Cmd::Run { scenario, live, out } => {
            let s = Scenario::from_json(&read(&scenario)?).map_err(|e| e.to_string())?;
            let mode = live.map_or(Mode::InProcess, Mode::Live);
            let output = run_scenario(&s, &mode).map_err(|e| e.to_string())?;
            let report = leak_scan(&output.transcript, &output.history);
            let json = output.transcript.to_json();
            match out {
                Some(path) => fs::write(&path, json + "\n").map_err(|e| format!("{}: {e}", path.display()))?,
                None => emit(&json),
            }
            for v in &report.violations {
                eprintln!("leak: record {} to {}: {:?}: {}", v.offset, v.recipient, v.rule, v.detail);
            }
            eprintln!("{} records, {} leak violations", report.records_scanned, report.violations.len());
            Ok(report.is_clean())
        }
        Cmd::Fuzz { seed, count, max_users, max_channels, max_actions, out } => {
            if !(1..=8).contains(&max_users) {
                return Err("--max-users must be between 1 and 8".into());
            }
            let bounds = FuzzBounds { max_users, max_channels, max_actions };
            let summary = fuzz(seed, count, bounds, FaultInjection::default());
            emit(&serde_json::to_string_pretty(&summary).expect("summary serializes"));
            if let (Some(failure), Some(path)) = (&summary.failure, out) {
                let json = serde_json::to_string_pretty(&failure.minimal).expect("scenarios serialize");
                fs::write(&path, json + "\n").map_err(|e| format!("{}: {e}", path.display()))?;
            }
            Ok(summary.failure.is_none())
        }
        Cmd::Oracle { state, speaker } => {
            let state: OracleState = serde_json::from_str(&read(&state)?).map_err(|e| e.to_string())?;
            let heard = oracle_recipients(&state, &speaker).map_err(|e| e.to_string())?;
            emit(&serde_json::to_string(&heard).expect("names serialize"));
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(args.cmd) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("hushsim: {e}");
            ExitCode::from(2)
        }
    }
}
