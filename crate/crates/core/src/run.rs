//! Headless runs: scenario in, event log and report out.

use std::path::{Path, PathBuf};

use crate::persistence::{replay, EventLog, FinalState};
use crate::domain::LogRecord;
use crate::scenario::Scenario;
use crate::sim::{Engine, EngineError, StoredAlert};
use crate::simnet::{run_report, MetricsTargets, Report};

/// Environment variable naming the directory default logs are written to.
pub const LOG_DIR_ENV: &str = "HEARTH_LOG_DIR";
/// Log directory used when the environment variable is unset.
pub const DEFAULT_LOG_DIR: &str = "logs";

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub final_state: FinalState,
    pub report: Report,
    pub alerts: Vec<StoredAlert>,
    /// Encoded log lines, when the log kept them in memory.
    pub lines: Vec<String>,
    pub log_path: Option<PathBuf>,
}

impl RunOutcome {
    pub fn log_text(&self) -> String {
        let mut s = String::with_capacity(self.lines.iter().map(|l| l.len() + 1).sum());
        for l in &self.lines {
            s.push_str(l);
            s.push('\n');
        }
        s
    }
}

/// Default log file for a scenario: `$HEARTH_LOG_DIR/<name>-<seed>.jsonl`.
pub fn default_log_path(scenario: &Scenario) -> PathBuf {
    let dir = std::env::var_os(LOG_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from(DEFAULT_LOG_DIR));
    dir.join(format!("{}-{}.jsonl", scenario.meta.name, scenario.meta.seed))
}

/// Runs a scenario to its horizon, writing into `log`.
pub fn run_with_log(scenario: &Scenario, log: EventLog, targets: &MetricsTargets) -> Result<RunOutcome, EngineError> {
    let mut engine = Engine::new(scenario, log)?;
    let final_state = engine.finish()?;
    let report = run_report(&final_state.metrics, targets);
    Ok(RunOutcome {
        final_state,
        report,
        alerts: engine.alerts().to_vec(),
        lines: engine.log().lines().to_vec(),
        log_path: engine.log().path().map(Path::to_path_buf),
    })
}

/// Runs a scenario keeping the log in memory only.
pub fn run_in_memory(scenario: &Scenario) -> Result<RunOutcome, EngineError> {
    run_with_log(scenario, EventLog::in_memory(), &MetricsTargets::default())
}

/// Runs a scenario writing the log to `path`.
pub fn run_to_file(scenario: &Scenario, path: &Path, targets: &MetricsTargets) -> Result<RunOutcome, EngineError> {
    run_with_log(scenario, EventLog::create(path)?, targets)
}

/// Report computed purely from a log.
pub fn report_from_records(records: &[LogRecord], targets: &MetricsTargets) -> Report {
    run_report(&replay(records).metrics, targets)
}
