use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hearth::commands::{self, RunArgs, EXIT_INTEGRITY, EXIT_OK, EXIT_SCHEMA};
use hearth::server;
use hearth_core::persistence::EventLog;
use hearth_core::run::default_log_path;
use hearth_core::scenario::Overrides;

#[derive(Parser)]
#[command(name = "hearth", version, about = "Deterministic smart-home simulator and home gateway")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario headless to its horizon and report metrics.
    Run {
        /// Scenario file, or the name of a bundled scenario.
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Horizon in virtual seconds.
        #[arg(long)]
        duration: Option<f64>,
        /// Event log path (default: $HEARTH_LOG_DIR/<name>-<seed>.jsonl).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Run a scenario paced against the wall clock and serve the gateway API.
    Serve {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Virtual seconds per wall-clock second.
        #[arg(long, default_value_t = 1.0)]
        pace: f64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Rebuild the final state from an event log.
    Replay {
        #[arg(long)]
        log: PathBuf,
    },
    /// Print the metrics summary of an event log.
    Report {
        #[arg(long)]
        log: PathBuf,
        /// Print JSON instead of the text table.
        #[arg(long)]
        json: bool,
    },
}

fn code(c: i32) -> ExitCode {
    ExitCode::from(u8::try_from(c).unwrap_or(1))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (mut out, mut err) = (std::io::stdout().lock(), std::io::stderr());
    match cli.command {
        Command::Run { scenario, seed, duration, log } => {
            code(commands::run(&RunArgs { scenario, seed, duration, log }, &mut out, &mut err))
        }
        Command::Replay { log } => code(commands::replay_log(&log, &mut out, &mut err)),
        Command::Report { log, json } => code(commands::report_log(&log, json, &mut out, &mut err)),
        Command::Serve { scenario, port, pace, seed, duration, log } => {
            drop(out);
            code(serve(scenario, port, pace, Overrides { seed, duration_s: duration }, log))
        }
    }
}

fn serve(path: PathBuf, port: u16, pace: f64, overrides: Overrides, log: Option<PathBuf>) -> i32 {
    let mut err = std::io::stderr();
    let scenario = match commands::load_scenario(&path, &overrides, &mut err) {
        Ok(s) => s,
        Err(c) => return c,
    };
    let log_path = log.unwrap_or_else(|| default_log_path(&scenario));
    let log = match EventLog::create(&log_path) {
        Ok(l) => l,
        Err(e) => {
            eprintln!("{e}");
            return EXIT_INTEGRITY;
        }
    };
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(r) => r,
        Err(e) => {
            eprintln!("{e}");
            return 1;
        }
    };
    runtime.block_on(async move {
        let listener = match tokio::net::TcpListener::bind(("127.0.0.1", port)).await {
            Ok(l) => l,
            Err(e) => {
                eprintln!("cannot listen on port {port}: {e}");
                return 1;
            }
        };
        let engine = match server::spawn_engine(&scenario, log, pace) {
            Ok(e) => e,
            Err(e) => {
                eprintln!("{e}");
                return if e.is_integrity() { EXIT_INTEGRITY } else { EXIT_SCHEMA };
            }
        };
        let addr = listener.local_addr().map(|a| a.to_string()).unwrap_or_default();
        eprintln!("serving {} on http://{addr} at pace {pace}, log {}", scenario.meta.name, log_path.display());
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        match server::serve(listener, engine, shutdown).await {
            Ok(state) => {
                eprintln!("stopped at {}; log flushed", state.horizon.map(|h| h.to_string()).unwrap_or_default());
                EXIT_OK
            }
            Err(e) => {
                eprintln!("{e}");
                EXIT_INTEGRITY
            }
        }
    })
}
