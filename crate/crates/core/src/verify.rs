//! Log-scanning checks. Every function here reads only the event log, so it
//! can judge a live run and a replayed file alike.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::access::AUTO_CLOSE_DEFAULT;
use crate::domain::{
    AccessDecision, AlertCategory, AttributeValue, CommandOrigin, CommandPhase, DeviceId, DeviceKind, Lifecycle,
    LogRecord, MessageKind, Portal, RecordBody, SimDuration, SimTime,
};

/// One failed check, located by the seq of the offending record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub seq: u64,
    pub t: SimTime,
    pub message: String,
}

fn violation(rec: &LogRecord, message: impl Into<String>) -> Violation {
    Violation { seq: rec.seq, t: rec.t, message: message.into() }
}

/// Registered devices by id, from the registration records.
pub fn registered_kinds(records: &[LogRecord]) -> BTreeMap<DeviceId, (String, DeviceKind)> {
    records
        .iter()
        .filter_map(|r| match &r.body {
            RecordBody::Lifecycle(Lifecycle::DeviceRegistered { descriptor, .. }) => {
                Some((descriptor.id.clone(), (descriptor.display_name.clone(), descriptor.kind)))
            }
            _ => None,
        })
        .collect()
}

/// Looks up a registered device id by display name.
pub fn device_by_name(records: &[LogRecord], name: &str) -> Option<DeviceId> {
    registered_kinds(records).into_iter().find(|(_, (n, _))| n == name).map(|(id, _)| id)
}

/// Portal safety and liveness.
///
/// Safety: each device-side transition of a portal to open is caused by a
/// command that is either an access-control open preceded by an allow audit
/// entry for that portal, or an authenticated client command.
///
/// Liveness: the command that closes an open portal is sent within `window`
/// of gateway up-time after the portal's most recent authorization, and a
/// portal still open at the end of the run is within that window too. Time
/// the gateway spends down does not count against the window.
pub fn check_access(records: &[LogRecord], window: SimDuration) -> Vec<Violation> {
    let kinds = registered_kinds(records);
    let portal_of = |id: &DeviceId| kinds.get(id).and_then(|(_, k)| Portal::for_kind(*k));
    let mut issued: BTreeMap<u64, (SimTime, CommandOrigin)> = BTreeMap::new();
    let mut last_allow: BTreeMap<Portal, SimTime> = BTreeMap::new();
    let mut last_auth: BTreeMap<Portal, SimTime> = BTreeMap::new();
    let mut open_since: BTreeMap<Portal, u64> = BTreeMap::new();
    let mut down: Vec<(SimTime, Option<SimTime>)> = Vec::new();
    let mut out = Vec::new();
    let mut horizon = None;
    for rec in records {
        match &rec.body {
            RecordBody::Lifecycle(Lifecycle::GatewayDown) => down.push((rec.t, None)),
            RecordBody::Lifecycle(Lifecycle::GatewayUp) => {
                if let Some((_, end @ None)) = down.last_mut() {
                    *end = Some(rec.t);
                }
            }
            RecordBody::Lifecycle(Lifecycle::Audit(a)) if a.decision == AccessDecision::Allow => {
                last_allow.insert(a.portal, a.time);
                last_auth.insert(a.portal, a.time);
            }
            RecordBody::Lifecycle(Lifecycle::RunEnd { horizon: h }) => horizon = Some((*h, rec)),
            RecordBody::Command(c) if c.attribute == "open" => {
                let Some(portal) = portal_of(&c.device) else { continue };
                match c.phase {
                    CommandPhase::Issued => {
                        issued.insert(c.message, (rec.t, c.origin.clone()));
                        if c.value == AttributeValue::Bool(true) {
                            if let CommandOrigin::Client { .. } = c.origin {
                                last_auth.insert(portal, rec.t);
                            }
                        }
                    }
                    CommandPhase::Applied if c.value == AttributeValue::Bool(true) => {
                        match issued.get(&c.message) {
                            None => out.push(violation(rec, format!("{portal} opened by unknown command {}", c.message))),
                            Some((sent, origin)) => match origin {
                                CommandOrigin::Client { .. } => {}
                                CommandOrigin::Access { portal: p } if *p == portal => {
                                    if last_allow.get(&portal).is_none_or(|t| t > sent) {
                                        out.push(violation(rec, format!("{portal} opened without an allow entry")));
                                    }
                                }
                                other => out.push(violation(rec, format!("{portal} opened by {other:?}"))),
                            },
                        }
                        open_since.insert(portal, rec.seq);
                    }
                    CommandPhase::Applied
                        if c.value == AttributeValue::Bool(false) && open_since.remove(&portal).is_some() =>
                    {
                        let sent = issued.get(&c.message).map(|(t, _)| *t).unwrap_or(rec.t);
                        if let Some(auth) = last_auth.get(&portal) {
                            let up = up_time(&down, *auth, sent);
                            if up > window {
                                out.push(violation(
                                    rec,
                                    format!("{portal} closed {up} of up-time after its last authorization"),
                                ));
                            }
                        }
                    }
                    _ => {}
                }
            }
            _ => {}
        }
    }
    if let Some((h, rec)) = horizon {
        for portal in open_since.keys() {
            if let Some(auth) = last_auth.get(portal) {
                if up_time(&down, *auth, h) > window {
                    out.push(violation(rec, format!("{portal} still open at end, authorized at {auth}")));
                }
            }
        }
    }
    out
}

/// Time in `[from, to)` outside the given down intervals.
fn up_time(down: &[(SimTime, Option<SimTime>)], from: SimTime, to: SimTime) -> SimDuration {
    let mut total = (to - from).as_nanos();
    for &(start, end) in down {
        let (s, e) = (start.max(from), end.unwrap_or(to).min(to));
        if s < e {
            total -= (e - s).as_nanos();
        }
    }
    SimDuration::from_nanos(total)
}

/// Access checks with the default auto-close window.
pub fn check_access_default(records: &[LogRecord]) -> Vec<Violation> {
    check_access(records, AUTO_CLOSE_DEFAULT)
}

/// Every swipe the gateway received while up produced exactly one audit
/// entry.
pub fn check_audit_complete(records: &[LogRecord]) -> Vec<Violation> {
    let mut received = 0usize;
    let mut discarded = 0usize;
    let mut audits = 0usize;
    for rec in records {
        match &rec.body {
            RecordBody::Message(m) if m.kind == MessageKind::Swipe => received += 1,
            RecordBody::Lifecycle(Lifecycle::Discarded { kind: MessageKind::Swipe, .. }) => discarded += 1,
            RecordBody::Lifecycle(Lifecycle::Audit(_)) => audits += 1,
            _ => {}
        }
    }
    if received - discarded == audits {
        Vec::new()
    } else {
        let last = records.last().map_or((0, SimTime::ZERO), |r| (r.seq, r.t));
        vec![Violation {
            seq: last.0,
            t: last.1,
            message: format!("{received} swipes received, {discarded} discarded, {audits} audited"),
        }]
    }
}

/// Each issued command is either delivered or dropped, and each delivered
/// command is applied or found already in place exactly once.
pub fn check_command_conservation(records: &[LogRecord]) -> Vec<Violation> {
    let mut issued: BTreeMap<u64, &LogRecord> = BTreeMap::new();
    let mut delivered = BTreeSet::new();
    let mut dropped = BTreeSet::new();
    let mut handled: BTreeMap<u64, usize> = BTreeMap::new();
    let mut out = Vec::new();
    for rec in records {
        match &rec.body {
            RecordBody::Command(c) => match c.phase {
                CommandPhase::Issued => {
                    issued.insert(c.message, rec);
                }
                CommandPhase::Applied | CommandPhase::Noop => *handled.entry(c.message).or_insert(0) += 1,
                CommandPhase::Acked => {}
            },
            RecordBody::Message(m) if m.kind == MessageKind::Command => {
                delivered.insert(m.id);
            }
            RecordBody::Lifecycle(Lifecycle::MessageDropped { id, kind: MessageKind::Command, .. }) => {
                dropped.insert(*id);
            }
            _ => {}
        }
    }
    let end = records.last().map(|r| r.t);
    for (id, rec) in &issued {
        let d = delivered.contains(id);
        let n = handled.get(id).copied().unwrap_or(0);
        if d && n != 1 {
            out.push(violation(rec, format!("command {id} delivered and handled {n} times")));
        } else if !d && !dropped.contains(id) {
            // Still in flight only if the run stopped before its delivery.
            let in_flight = end.is_some_and(|e| e.as_nanos() - rec.t.as_nanos() < 20_000_000);
            if !in_flight {
                out.push(violation(rec, format!("command {id} neither delivered nor dropped")));
            }
        } else if dropped.contains(id) && n != 0 {
            out.push(violation(rec, format!("dropped command {id} was handled")));
        }
    }
    out
}

/// Number of security alerts in the log.
pub fn security_alert_count(records: &[LogRecord]) -> usize {
    records
        .iter()
        .filter(|r| matches!(&r.body, RecordBody::Alert(a) if a.category == AlertCategory::Security))
        .count()
}

/// Thermostat readings as seen by the gateway: (seq, t, temperature).
pub fn temperature_readings(records: &[LogRecord], thermostat: &DeviceId) -> Vec<(u64, SimTime, f64)> {
    records
        .iter()
        .filter_map(|r| match &r.body {
            RecordBody::Reading(rd) if &rd.device == thermostat => {
                rd.values.get("temperature").and_then(AttributeValue::as_f64).map(|v| (r.seq, r.t, v))
            }
            _ => None,
        })
        .collect()
}

/// Issued commands setting `attribute` of `device` to `value`: (seq, t).
pub fn issued_commands(
    records: &[LogRecord],
    device: &DeviceId,
    attribute: &str,
    value: &AttributeValue,
) -> Vec<(u64, SimTime)> {
    records
        .iter()
        .filter_map(|r| match &r.body {
            RecordBody::Command(c)
                if c.phase == CommandPhase::Issued
                    && &c.device == device
                    && c.attribute == attribute
                    && &c.value == value =>
            {
                Some((r.seq, r.t))
            }
            _ => None,
        })
        .collect()
}

/// Device-side value of a boolean attribute over time, from applied
/// commands: the list of (t, value) transitions.
pub fn applied_transitions(records: &[LogRecord], device: &DeviceId, attribute: &str) -> Vec<(SimTime, bool)> {
    records
        .iter()
        .filter_map(|r| match &r.body {
            RecordBody::Command(c)
                if c.phase == CommandPhase::Applied && &c.device == device && c.attribute == attribute =>
            {
                c.value.as_bool().map(|v| (r.t, v))
            }
            _ => None,
        })
        .collect()
}

/// Times at which both devices were on at once according to their applied
/// transitions: returns the start of each overlap.
pub fn both_on(a: &[(SimTime, bool)], b: &[(SimTime, bool)]) -> Vec<SimTime> {
    let mut events: Vec<(SimTime, usize, bool)> =
        a.iter().map(|&(t, v)| (t, 0, v)).chain(b.iter().map(|&(t, v)| (t, 1, v))).collect();
    events.sort_by_key(|e| e.0);
    let mut on = [false, false];
    let mut out = Vec::new();
    for (t, i, v) in events {
        let before = on[0] && on[1];
        on[i] = v;
        if !before && on[0] && on[1] {
            out.push(t);
        }
    }
    out
}

/// Result of the threshold check for one actuator.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdCheck {
    /// First reading past the threshold: (seq, t, value).
    pub first_crossing: Option<(u64, SimTime, f64)>,
    /// First on-command: (seq, t).
    pub first_on: Option<(u64, SimTime)>,
}

impl ThresholdCheck {
    /// The on-command is issued while handling that very reading.
    pub fn exact(&self) -> bool {
        match (self.first_crossing, self.first_on) {
            (Some((rs, rt, _)), Some((cs, ct))) => rt == ct && cs > rs,
            _ => false,
        }
    }
}

/// Compares the first reading beyond a threshold with the first command
/// turning the actuator on.
pub fn threshold_check(
    records: &[LogRecord],
    thermostat: &DeviceId,
    actuator: &DeviceId,
    crosses: impl Fn(f64) -> bool,
) -> ThresholdCheck {
    let first_crossing = temperature_readings(records, thermostat).into_iter().find(|&(_, _, v)| crosses(v));
    let first_on = issued_commands(records, actuator, "on", &AttributeValue::Bool(true)).into_iter().next();
    ThresholdCheck { first_crossing, first_on }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(x: i64) -> SimTime {
        SimTime::ZERO + SimDuration::from_secs(x)
    }

    #[test]
    fn up_time_excludes_outages() {
        let down = [(s(10), Some(s(20))), (s(50), None)];
        assert_eq!(up_time(&down, s(0), s(40)), SimDuration::from_secs(30));
        assert_eq!(up_time(&down, s(15), s(25)), SimDuration::from_secs(5));
        assert_eq!(up_time(&down, s(30), s(100)), SimDuration::from_secs(20));
        assert_eq!(up_time(&[], s(3), s(9)), SimDuration::from_secs(6));
    }
}
