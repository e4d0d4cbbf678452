use std::collections::BTreeSet;

use hearth_core::domain::{encode_record, AttributeValue, Lifecycle, MessageKind, RecordBody};
use hearth_core::gateway::AuthError;
use hearth_core::persistence::{parse_log, replay, EventLog, PersistError};
use hearth_core::run::run_in_memory;
use hearth_core::scenario::{secs, Scenario};
use hearth_core::sim::Engine;
use hearth_core::verify::{check_access_default, check_audit_complete, check_command_conservation};
use proptest::prelude::*;
use serde_json::{json, Value};

const DURATION_S: u32 = 240;

fn stimulus() -> impl Strategy<Value = Value> {
    let readers = prop::sample::select(vec!["rfid reader", "garage reader"]);
    let cards = prop::sample::select(vec!["1001", "2002", "9999"]);
    let writable = prop::sample::select(vec![
        ("light", "on"),
        ("door", "open"),
        ("garage door", "open"),
        ("siren", "on"),
        ("window", "open"),
    ]);
    prop_oneof![
        Just(json!({"stimulus": "fire_start"})),
        Just(json!({"stimulus": "fire_stop"})),
        Just(json!({"stimulus": "gateway_down"})),
        Just(json!({"stimulus": "gateway_up"})),
        (1.0..60.0f64).prop_map(|d| json!({"stimulus": "motion", "zone": "living", "duration_s": d})),
        (-20.0..40.0f64).prop_map(|d| json!({"stimulus": "rain", "level_delta": d})),
        (readers, cards).prop_map(|(r, c)| json!({"stimulus": "swipe", "reader": r, "card": c})),
        prop::bool::ANY.prop_map(|ok| json!({
            "stimulus": "login",
            "username": "owner",
            "password": if ok { "hearth-owner" } else { "guess" },
        })),
        (writable, prop::bool::ANY).prop_map(|((d, a), v)| json!({
            "stimulus": "client_command",
            "username": "owner",
            "device": d,
            "attribute": a,
            "value": v,
        })),
    ]
}

fn timeline() -> impl Strategy<Value = Vec<Value>> {
    prop::collection::vec((0..DURATION_S * 10, stimulus()), 0..24).prop_map(|entries| {
        let mut entries: Vec<_> = entries
            .into_iter()
            .map(|(at, mut s)| {
                s["at_s"] = json!(f64::from(at) / 10.0);
                s
            })
            .collect();
        entries.sort_by(|a, b| a["at_s"].as_f64().partial_cmp(&b["at_s"].as_f64()).unwrap());
        entries
    })
}

fn scenario(seed: u64, loss: f64, timeline: Vec<Value>) -> Scenario {
    let mut v: Value = serde_json::from_str(hearth_core::scenario::bundled("demo-home").unwrap()).unwrap();
    v["meta"]["seed"] = json!(seed);
    v["meta"]["duration_s"] = json!(DURATION_S);
    v["net"] = json!({"latency_base_ms": 2, "latency_jitter_ms": 6, "loss_probability": loss});
    v["timeline"] = Value::Array(timeline);
    Scenario::from_json(&v.to_string()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn runs_are_deterministic_and_replay_to_the_live_state(
        seed in any::<u64>(),
        lossy in prop::bool::ANY,
        timeline in timeline(),
    ) {
        let s = scenario(seed, if lossy { 0.05 } else { 0.0 }, timeline);
        let a = run_in_memory(&s).unwrap();
        let b = run_in_memory(&s).unwrap();
        prop_assert_eq!(&a.lines, &b.lines);
        prop_assert_eq!(&a.report, &b.report);

        let records = parse_log(&a.log_text()).unwrap();
        prop_assert_eq!(records.len(), a.lines.len());
        prop_assert_eq!(&replay(&records), &a.final_state);
        for (rec, line) in records.iter().zip(&a.lines) {
            prop_assert_eq!(&encode_record(rec).unwrap(), line);
        }

        prop_assert_eq!(check_command_conservation(&records), vec![]);
        prop_assert_eq!(check_audit_complete(&records), vec![]);
        if !lossy {
            prop_assert_eq!(check_access_default(&records), vec![]);
        }
    }

    #[test]
    fn registrations_follow_delivered_joins(seed in any::<u64>(), timeline in timeline()) {
        let s = scenario(seed, 0.0, timeline);
        let out = run_in_memory(&s).unwrap();
        let records = parse_log(&out.log_text()).unwrap();
        let mut joined = BTreeSet::new();
        let mut names = BTreeSet::new();
        let mut ids = BTreeSet::new();
        for rec in &records {
            match &rec.body {
                RecordBody::Message(m) if m.kind == MessageKind::Join => {
                    joined.insert(m.src.clone());
                }
                RecordBody::Lifecycle(Lifecycle::DeviceRegistered { descriptor, .. }) => {
                    prop_assert!(joined.contains(&descriptor.logical_address), "{:?}", descriptor);
                    prop_assert!(names.insert(descriptor.display_name.clone()));
                    prop_assert!(ids.insert(descriptor.id.clone()));
                }
                _ => {}
            }
        }
        prop_assert_eq!(names.len(), s.devices.len());
    }

    #[test]
    fn truncated_logs_are_rejected_at_the_cut(cut in 0.0..1.0f64) {
        let s = Scenario::bundled("fire-demo").unwrap();
        let text = run_in_memory(&s).unwrap().log_text();
        let at = ((text.len() as f64) * cut) as usize;
        let prefix = &text[..at];
        let complete = prefix.matches('\n').count() as u64;
        match parse_log(prefix) {
            Ok(records) => {
                // Only a cut that drops nothing but the final newline is intact.
                let whole_line = text.as_bytes().get(at) == Some(&b'\n');
                prop_assert!(prefix.is_empty() || prefix.ends_with('\n') || whole_line);
                prop_assert_eq!(records.len() as u64, complete + u64::from(whole_line));
            }
            Err(PersistError::Corrupt { seq, .. }) => prop_assert_eq!(seq, complete),
            Err(e) => prop_assert!(false, "unexpected error {}", e),
        }
    }

    #[test]
    fn forged_tokens_are_refused(token in "[0-9a-f]{0,40}", seed in any::<u64>()) {
        let s = scenario(seed, 0.0, Vec::new());
        let mut engine = Engine::new(&s, EventLog::in_memory()).unwrap();
        engine.advance_to(secs(5.0)).unwrap();
        let real = engine.login("owner", "hearth-owner").unwrap().unwrap();
        prop_assume!(token != real.token);
        prop_assert_eq!(engine.list_devices(&token).unwrap_err(), AuthError::InvalidToken);
        let light = engine
            .list_devices(&real.token)
            .unwrap()
            .into_iter()
            .find(|(d, _)| d.display_name == "light")
            .map(|(d, _)| d.id)
            .unwrap();
        let rejected = engine
            .dispatch_command(&token, &light, "on", AttributeValue::Bool(true))
            .unwrap();
        prop_assert!(rejected.is_err());
        prop_assert!(engine.list_devices(&real.token).is_ok());
    }
}

#[test]
fn sessions_survive_an_outage_and_expire() {
    let timeline = vec![json!({"at_s": 20, "stimulus": "gateway_down"}), json!({"at_s": 30, "stimulus": "gateway_up"})];
    let mut s = scenario(7, 0.0, timeline);
    s.gateway.session_ttl_s = 60;
    let mut engine = Engine::new(&s, EventLog::in_memory()).unwrap();
    engine.advance_to(secs(5.0)).unwrap();
    let token = engine.login("owner", "hearth-owner").unwrap().unwrap();
    assert_eq!(token.expires_at, secs(65.0));
    assert!(engine.list_devices(&token.token).is_ok());
    engine.advance_to(secs(25.0)).unwrap();
    assert_eq!(engine.list_devices(&token.token).unwrap_err(), AuthError::Unavailable);
    engine.advance_to(secs(35.0)).unwrap();
    assert!(engine.list_devices(&token.token).is_ok());
    engine.advance_to(secs(64.999)).unwrap();
    assert!(engine.list_devices(&token.token).is_ok());
    engine.advance_to(secs(65.0)).unwrap();
    assert_eq!(engine.list_devices(&token.token).unwrap_err(), AuthError::Expired);
}

fn door_log() -> Vec<hearth_core::domain::LogRecord> {
    let timeline = vec![json!({"at_s": 8, "stimulus": "swipe", "reader": "rfid reader", "card": "1001"})];
    let out = run_in_memory(&scenario(3, 0.0, timeline)).unwrap();
    parse_log(&out.log_text()).unwrap()
}

fn is_door_command(rec: &hearth_core::domain::LogRecord, open: bool) -> bool {
    matches!(&rec.body, RecordBody::Command(c) if c.attribute == "open" && c.value == AttributeValue::Bool(open))
}

#[test]
fn access_check_flags_a_door_left_open() {
    let records = door_log();
    assert!(records.iter().any(|r| is_door_command(r, false)));
    assert_eq!(check_access_default(&records), vec![]);
    let kept: Vec<_> = records.into_iter().filter(|r| !is_door_command(r, false)).collect();
    let v = check_access_default(&kept);
    assert_eq!(v.len(), 1, "{v:?}");
    assert!(v[0].message.contains("still open"));
}

#[test]
fn access_check_flags_an_open_without_authorization() {
    let kept: Vec<_> = door_log()
        .into_iter()
        .filter(|r| !matches!(&r.body, RecordBody::Lifecycle(Lifecycle::Audit(_))))
        .collect();
    let v = check_access_default(&kept);
    assert!(v.iter().any(|v| v.message.contains("without an allow entry")), "{v:?}");
}
