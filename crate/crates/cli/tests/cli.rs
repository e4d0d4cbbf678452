use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

use hearth_core::persistence::{read_log, replay};
use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_hearth");

fn scenario_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/scenarios").join(format!("{name}.json"))
}

fn hearth(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN).args(args).current_dir(dir).env("HEARTH_LOG_DIR", dir.join("logs")).output().unwrap()
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn write_variant(dir: &Path, name: &str, edit: impl FnOnce(&mut Value)) -> PathBuf {
    let mut v: Value = serde_json::from_str(&std::fs::read_to_string(scenario_path(name)).unwrap()).unwrap();
    edit(&mut v);
    let path = dir.join(format!("{name}-variant.json"));
    std::fs::write(&path, serde_json::to_string_pretty(&v).unwrap()).unwrap();
    path
}

#[test]
fn run_writes_log_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = scenario_path("fire-demo");
    let out = hearth(dir.path(), &["run", "--scenario", scenario.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let logs = dir.path().join("logs");
    let log = std::fs::read_dir(&logs)
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|e| e == "jsonl"))
        .expect("log written to the default directory");
    let stem = log.file_stem().unwrap().to_str().unwrap().to_string();
    assert!(stem.starts_with("fire-demo-"));
    assert!(logs.join(format!("{stem}.report.json")).exists());
    assert!(logs.join(format!("{stem}.report.txt")).exists());
    assert!(text(&out.stdout).contains("uptime"));
}

#[test]
fn same_inputs_give_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = scenario_path("attacks-demo");
    let mut outputs = Vec::new();
    for i in 0..2 {
        let log = dir.path().join(format!("run{i}.jsonl"));
        let out = hearth(dir.path(), &["run", "--scenario", scenario.to_str().unwrap(), "--log", log.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
        let report = std::fs::read(dir.path().join(format!("run{i}.report.json"))).unwrap();
        outputs.push((std::fs::read(&log).unwrap(), report));
    }
    assert_eq!(outputs[0].0, outputs[1].0);
    assert_eq!(outputs[0].1, outputs[1].1);
}

#[test]
fn seed_override_changes_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = scenario_path("fire-demo");
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    let s = scenario.to_str().unwrap();
    hearth(dir.path(), &["run", "--scenario", s, "--seed", "1", "--log", a.to_str().unwrap()]);
    hearth(dir.path(), &["run", "--scenario", s, "--seed", "2", "--log", b.to_str().unwrap()]);
    assert_ne!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
}

#[test]
fn report_of_a_log_matches_the_run_report() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("uptime.jsonl");
    let scenario = scenario_path("uptime-demo");
    let out = hearth(dir.path(), &["run", "--scenario", scenario.to_str().unwrap(), "--log", log.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let written: Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("uptime.report.json")).unwrap()).unwrap();
    let out = hearth(dir.path(), &["report", "--log", log.to_str().unwrap(), "--json"]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let recomputed: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(written, recomputed);
    assert_eq!(recomputed["uptime"]["measured"], serde_json::json!(0.995));
}

#[test]
fn replay_prints_the_final_state() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("fire.jsonl");
    let scenario = scenario_path("fire-demo");
    hearth(dir.path(), &["run", "--scenario", scenario.to_str().unwrap(), "--log", log.to_str().unwrap()]);
    let out = hearth(dir.path(), &["replay", "--log", log.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let printed: Value = serde_json::from_slice(&out.stdout).unwrap();
    let expected = serde_json::to_value(replay(&read_log(&log).unwrap())).unwrap();
    assert_eq!(printed, expected);
}

#[test]
fn failed_target_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_variant(dir.path(), "uptime-demo", |v| {
        let timeline = v["timeline"].as_array_mut().unwrap();
        let up = timeline.iter_mut().find(|e| e["stimulus"] == "gateway_up").unwrap();
        up["at_s"] = serde_json::json!(700);
    });
    let log = dir.path().join("down.jsonl");
    let out = hearth(dir.path(), &["run", "--scenario", scenario.to_str().unwrap(), "--log", log.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1), "{}", text(&out.stdout));
    assert!(text(&out.stdout).contains("FAIL"));
    let out = hearth(dir.path(), &["report", "--log", log.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn schema_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let no_seed = write_variant(dir.path(), "fire-demo", |v| {
        v["meta"].as_object_mut().unwrap().remove("seed");
    });
    let out = hearth(dir.path(), &["run", "--scenario", no_seed.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("seed"), "{}", text(&out.stderr));

    let out = hearth(dir.path(), &["run", "--scenario", dir.path().join("absent.json").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));

    let bad_entry = write_variant(dir.path(), "fire-demo", |v| {
        v["timeline"].as_array_mut().unwrap()[0]["colour"] = serde_json::json!("red");
    });
    let out = hearth(dir.path(), &["run", "--scenario", bad_entry.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", text(&out.stderr));
}

#[test]
fn corrupt_log_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("fire.jsonl");
    let scenario = scenario_path("fire-demo");
    hearth(dir.path(), &["run", "--scenario", scenario.to_str().unwrap(), "--log", log.to_str().unwrap()]);
    let bytes = std::fs::read(&log).unwrap();
    std::fs::write(&log, &bytes[..bytes.len() - 7]).unwrap();
    for cmd in ["report", "replay"] {
        let out = hearth(dir.path(), &[cmd, "--log", log.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(3), "{cmd}: {}", text(&out.stderr));
        assert!(text(&out.stderr).contains("seq"), "{}", text(&out.stderr));
    }
}

#[test]
fn empty_log_reports_not_measured() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("empty.jsonl");
    std::fs::write(&log, "").unwrap();
    let out = hearth(dir.path(), &["report", "--log", log.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    assert!(text(&out.stdout).contains("not measured"));
}

fn wait_for_line(reader: &mut impl BufRead, needle: &str) -> String {
    let mut line = String::new();
    loop {
        line.clear();
        assert!(reader.read_line(&mut line).unwrap() > 0, "stderr closed before {needle:?}");
        if line.contains(needle) {
            return line;
        }
    }
}

#[test]
fn serve_stops_on_interrupt_with_a_replayable_log() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("serve.jsonl");
    let scenario = scenario_path("demo-home");
    let mut child = Command::new(BIN)
        .args(["serve", "--scenario", scenario.to_str().unwrap(), "--port", "0", "--pace", "20"])
        .args(["--log", log.to_str().unwrap()])
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut stderr = BufReader::new(child.stderr.take().unwrap());
    let line = wait_for_line(&mut stderr, "serving");
    let addr = line.split("http://").nth(1).unwrap().split_whitespace().next().unwrap().to_string();
    std::thread::sleep(Duration::from_millis(300));

    let busy = Command::new(BIN)
        .args(["serve", "--scenario", scenario.to_str().unwrap()])
        .args(["--port", addr.rsplit(':').next().unwrap(), "--log", dir.path().join("busy.jsonl").to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(busy.status.code(), Some(1), "{}", text(&busy.stderr));

    let status = Command::new("kill").args(["-INT", &child.id().to_string()]).status().unwrap();
    assert!(status.success());
    let deadline = Instant::now() + Duration::from_secs(20);
    let code = loop {
        if let Some(s) = child.try_wait().unwrap() {
            break s.code();
        }
        assert!(Instant::now() < deadline, "server did not stop");
        std::thread::sleep(Duration::from_millis(20));
    };
    assert_eq!(code, Some(0));
    let records = read_log(&log).unwrap();
    let state = replay(&records);
    assert!(state.horizon.is_some(), "log ends with a run end record");
    assert!(state.directory.len() >= 17);
}
