//! `run`, `replay` and `report`.

use std::io::Write;
use std::path::{Path, PathBuf};

use hearth_core::domain::LogRecord;
use hearth_core::persistence::{read_log, replay};
use hearth_core::run::{default_log_path, report_from_records, run_to_file};
use hearth_core::scenario::{Overrides, Scenario};
use hearth_core::simnet::{MetricsTargets, Report, Verdict};
use hearth_core::verify;

/// All targets met, no integrity problem.
pub const EXIT_OK: i32 = 0;
/// The run completed but a target or a log check failed.
pub const EXIT_FAILED: i32 = 1;
/// The scenario could not be read or did not validate.
pub const EXIT_SCHEMA: i32 = 2;
/// The event log could not be written or read back intact.
pub const EXIT_INTEGRITY: i32 = 3;

#[derive(Debug, Clone, Default)]
pub struct RunArgs {
    pub scenario: PathBuf,
    pub seed: Option<u64>,
    pub duration: Option<f64>,
    pub log: Option<PathBuf>,
}

/// Loads a scenario file or bundled name, reporting failures on `err`.
pub fn load_scenario(path: &Path, overrides: &Overrides, err: &mut impl Write) -> Result<Scenario, i32> {
    Scenario::load(path, overrides).map_err(|e| {
        let _ = writeln!(err, "{e}");
        EXIT_SCHEMA
    })
}

/// Report files written beside a log: `<stem>.report.json` and `.report.txt`.
pub fn report_paths(log: &Path) -> (PathBuf, PathBuf) {
    (log.with_extension("report.json"), log.with_extension("report.txt"))
}

/// Log checks every run must pass.
pub fn log_violations(records: &[LogRecord]) -> Vec<verify::Violation> {
    let mut v = verify::check_access_default(records);
    v.extend(verify::check_audit_complete(records));
    v.extend(verify::check_command_conservation(records));
    v
}

pub fn run(args: &RunArgs, out: &mut impl Write, err: &mut impl Write) -> i32 {
    let overrides = Overrides { seed: args.seed, duration_s: args.duration };
    let scenario = match load_scenario(&args.scenario, &overrides, err) {
        Ok(s) => s,
        Err(code) => return code,
    };
    let log_path = args.log.clone().unwrap_or_else(|| default_log_path(&scenario));
    let targets = MetricsTargets::default();
    let outcome = match run_to_file(&scenario, &log_path, &targets) {
        Ok(o) => o,
        Err(e) => {
            let _ = writeln!(err, "{e}");
            return if e.is_integrity() { EXIT_INTEGRITY } else { EXIT_SCHEMA };
        }
    };
    let records = match read_log(&log_path) {
        Ok(r) => r,
        Err(e) => {
            let _ = writeln!(err, "{e}");
            return EXIT_INTEGRITY;
        }
    };
    let (json_path, text_path) = report_paths(&log_path);
    let table = outcome.report.to_text_table();
    for (path, body) in [(&json_path, outcome.report.to_json()), (&text_path, table.clone())] {
        if let Err(e) = std::fs::write(path, body) {
            let _ = writeln!(err, "{}: {e}", path.display());
            return EXIT_INTEGRITY;
        }
    }
    let _ = write!(out, "{table}");
    let _ = writeln!(out, "log: {}", log_path.display());
    let _ = writeln!(out, "report: {}", json_path.display());
    let violations = log_violations(&records);
    for v in &violations {
        let _ = writeln!(err, "check failed at seq {} (t={}): {}", v.seq, v.t, v.message);
    }
    if !violations.is_empty() || !outcome.report.all_pass() {
        return EXIT_FAILED;
    }
    EXIT_OK
}

fn load_log(path: &Path, err: &mut impl Write) -> Result<Vec<LogRecord>, i32> {
    read_log(path).map_err(|e| {
        let _ = writeln!(err, "{e}");
        EXIT_INTEGRITY
    })
}

/// Rebuilds the final state from a log and prints it as JSON.
pub fn replay_log(path: &Path, out: &mut impl Write, err: &mut impl Write) -> i32 {
    let records = match load_log(path, err) {
        Ok(r) => r,
        Err(code) => return code,
    };
    let state = replay(&records);
    match serde_json::to_string_pretty(&state) {
        Ok(s) => {
            let _ = writeln!(out, "{s}");
            EXIT_OK
        }
        Err(e) => {
            let _ = writeln!(err, "{e}");
            EXIT_INTEGRITY
        }
    }
}

fn any_fail(r: &Report) -> bool {
    r.uptime.verdict == Verdict::Fail || r.latency_p99_ms.verdict == Verdict::Fail
}

/// Prints the metrics summary of a log.
pub fn report_log(path: &Path, json: bool, out: &mut impl Write, err: &mut impl Write) -> i32 {
    let records = match load_log(path, err) {
        Ok(r) => r,
        Err(code) => return code,
    };
    let report = report_from_records(&records, &MetricsTargets::default());
    if json {
        let _ = writeln!(out, "{}", report.to_json());
    } else {
        let _ = write!(out, "{}", report.to_text_table());
    }
    if any_fail(&report) {
        EXIT_FAILED
    } else {
        EXIT_OK
    }
}
