//! The append-only JSON Lines event log, log reading, replay and the readings
//! index derived from the log.
//!
//! Records are written through a buffered writer; `EventLog::flush` pushes the
//! buffer to the OS and calls `sync_data`, and is invoked at the end of a run
//! and on graceful shutdown of the server. A crash can therefore lose a
//! suffix of records but never rewrites earlier bytes.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    decode_record, encode_record, AccessDecision, AlertCategory, AttributeValue, AuditEntry, CommandPhase,
    DecodeError, DeviceId, DeviceState, EncodeError, JoinRejectReason, Lifecycle, LogRecord, RecordBody, SimTime,
};
use crate::gateway::{DirectoryEntry, LinkStatus, Registration};
use crate::simnet::{uptime_fraction, Interval, RunMetrics};

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("integrity: expected seq {expected}, got {found}")]
    SeqGap { expected: u64, found: u64 },
    #[error("integrity: {0}")]
    Encode(#[from] EncodeError),
    #[error("corrupt record at seq {seq} (byte {offset}): {source}")]
    Corrupt { seq: u64, offset: u64, source: DecodeError },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl PersistError {
    /// Whether this is a log integrity problem rather than an I/O failure.
    pub fn is_integrity(&self) -> bool {
        !matches!(self, PersistError::Io { .. })
    }
}

/// Append-only writer. Keeps the encoded lines in memory, on disk, or both.
#[derive(Debug)]
pub struct EventLog {
    file: Option<(PathBuf, BufWriter<File>)>,
    lines: Option<Vec<String>>,
    next_seq: u64,
    bytes: u64,
}

impl EventLog {
    pub fn in_memory() -> Self {
        EventLog { file: None, lines: Some(Vec::new()), next_seq: 0, bytes: 0 }
    }

    /// Creates (truncating) a log file.
    pub fn create(path: impl AsRef<Path>) -> Result<Self, PersistError> {
        let path = path.as_ref().to_path_buf();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|source| PersistError::Io { path: dir.to_path_buf(), source })?;
        }
        let f = File::create(&path).map_err(|source| PersistError::Io { path: path.clone(), source })?;
        Ok(EventLog { file: Some((path, BufWriter::new(f))), lines: None, next_seq: 0, bytes: 0 })
    }

    /// Also keep lines in memory.
    pub fn keep_lines(mut self) -> Self {
        self.lines.get_or_insert_with(Vec::new);
        self
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    pub fn bytes_written(&self) -> u64 {
        self.bytes
    }

    pub fn path(&self) -> Option<&Path> {
        self.file.as_ref().map(|(p, _)| p.as_path())
    }

    pub fn lines(&self) -> &[String] {
        self.lines.as_deref().unwrap_or(&[])
    }

    pub fn append(&mut self, record: &LogRecord) -> Result<(), PersistError> {
        if record.seq != self.next_seq {
            return Err(PersistError::SeqGap { expected: self.next_seq, found: record.seq });
        }
        let line = encode_record(record)?;
        if let Some((path, w)) = &mut self.file {
            w.write_all(line.as_bytes())
                .and_then(|_| w.write_all(b"\n"))
                .map_err(|source| PersistError::Io { path: path.clone(), source })?;
        }
        self.bytes += line.len() as u64 + 1;
        if let Some(lines) = &mut self.lines {
            lines.push(line);
        }
        self.next_seq += 1;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<(), PersistError> {
        if let Some((path, w)) = &mut self.file {
            w.flush()
                .and_then(|_| w.get_ref().sync_data())
                .map_err(|source| PersistError::Io { path: path.clone(), source })?;
        }
        Ok(())
    }
}

/// Parses log text, checking that sequence numbers start at 0 and have no
/// gaps. Errors name the offending seq (the expected one for lines that do
/// not decode) and the byte offset of the problem.
pub fn parse_log(text: &str) -> Result<Vec<LogRecord>, PersistError> {
    let mut out = Vec::new();
    let mut offset = 0u64;
    for raw in text.split_inclusive('\n') {
        let line = raw.strip_suffix('\n').unwrap_or(raw);
        let line = line.strip_suffix('\r').unwrap_or(line);
        let expected = out.len() as u64;
        let rec = decode_record(line).map_err(|source| {
            let inner = match &source {
                DecodeError::Malformed { offset, .. } => *offset as u64,
                _ => 0,
            };
            PersistError::Corrupt { seq: expected, offset: offset + inner, source }
        })?;
        if rec.seq != expected {
            return Err(PersistError::SeqGap { expected, found: rec.seq });
        }
        out.push(rec);
        offset += raw.len() as u64;
    }
    Ok(out)
}

pub fn read_log(path: impl AsRef<Path>) -> Result<Vec<LogRecord>, PersistError> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|source| PersistError::Io { path: path.to_path_buf(), source })?;
    let mut text = String::new();
    let mut reader = BufReader::new(f);
    loop {
        let n = reader
            .read_line(&mut text)
            .map_err(|source| PersistError::Io { path: path.to_path_buf(), source })?;
        if n == 0 {
            break;
        }
    }
    parse_log(&text)
}

/// World state reconstructed from a log, or reported by a live engine.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FinalState {
    /// End of the run, if the log contains its end marker.
    pub horizon: Option<SimTime>,
    pub gateway_up: bool,
    /// The gateway's directory: registrations and its view of every device.
    pub directory: BTreeMap<DeviceId, DirectoryEntry>,
    /// Device-side state of every registered actuator.
    pub actuators: BTreeMap<DeviceId, DeviceState>,
    pub audit: Vec<AuditEntry>,
    pub metrics: RunMetrics,
}

/// Incremental replay. Feed records in order, then call `finish`.
#[derive(Debug, Default)]
pub struct Replayer {
    state: FinalState,
    last_t: SimTime,
    down_since: Option<SimTime>,
    down: Vec<Interval>,
    open_attacks: Vec<SimTime>,
}

impl Replayer {
    pub fn new() -> Self {
        Replayer { state: FinalState { gateway_up: true, ..FinalState::default() }, ..Replayer::default() }
    }

    pub fn apply(&mut self, rec: &LogRecord) {
        let t = rec.t;
        if t != self.last_t {
            self.open_attacks.clear();
        }
        self.last_t = t;
        let st = &mut self.state;
        match &rec.body {
            RecordBody::Reading(r) => {
                if let Some(e) = st.directory.get_mut(&r.device) {
                    for (k, v) in &r.values {
                        e.state.attributes.insert(k.clone(), v.clone());
                    }
                    e.state.last_update = e.state.last_update.max(r.sampled_at);
                }
            }
            RecordBody::Command(c) => match c.phase {
                CommandPhase::Applied => {
                    if let Some(s) = st.actuators.get_mut(&c.device) {
                        s.attributes.insert(c.attribute.clone(), c.value.clone());
                        s.last_update = s.last_update.max(t);
                    }
                }
                CommandPhase::Acked => {
                    if let Some(e) = st.directory.get_mut(&c.device) {
                        e.state.attributes.insert(c.attribute.clone(), c.value.clone());
                        e.state.last_update = e.state.last_update.max(t);
                    }
                }
                CommandPhase::Issued | CommandPhase::Noop => {}
            },
            RecordBody::Alert(a) => {
                *st.metrics.alert_count_by_category.entry(a.category).or_insert(0) += 1;
                if a.category == AlertCategory::Security && !self.open_attacks.is_empty() {
                    self.open_attacks.remove(0);
                    st.metrics.attacks_alerted += 1;
                }
            }
            RecordBody::Message(m) => {
                st.metrics.delivered_count += 1;
                st.metrics.latency_samples.push(m.latency());
            }
            RecordBody::Lifecycle(l) => match l {
                Lifecycle::RunEnd { horizon } => st.horizon = Some(*horizon),
                Lifecycle::DeviceRegistered { descriptor, state } => {
                    if st.metrics.start_time.is_none() {
                        st.metrics.start_time = Some(t - SimTime::ZERO);
                    }
                    if !descriptor.kind.is_sensor() {
                        st.actuators.insert(descriptor.id.clone(), state.clone());
                    }
                    let registration =
                        Registration { descriptor: descriptor.clone(), registered_at: t, status: LinkStatus::Online };
                    st.directory.insert(descriptor.id.clone(), DirectoryEntry { registration, state: state.clone() });
                }
                Lifecycle::JoinRejected { reason: JoinRejectReason::BadSecret, .. } => self.attack(t),
                Lifecycle::LoginFailed { lockout: true, .. } => self.attack(t),
                Lifecycle::Audit(a) => {
                    st.audit.push(a.clone());
                    if a.decision == AccessDecision::Deny {
                        self.attack(t);
                    }
                }
                Lifecycle::GatewayDown => {
                    st.gateway_up = false;
                    self.down_since.get_or_insert(t);
                }
                Lifecycle::GatewayUp => {
                    st.gateway_up = true;
                    if let Some(start) = self.down_since.take() {
                        self.down.push(Interval { start, end: t });
                    }
                }
                Lifecycle::MessageDropped { .. } => st.metrics.dropped_count += 1,
                _ => {}
            },
        }
    }

    fn attack(&mut self, t: SimTime) {
        self.state.metrics.attacks_observed += 1;
        self.open_attacks.push(t);
    }

    pub fn finish(mut self) -> FinalState {
        let horizon = self.state.horizon.unwrap_or(self.last_t);
        if let Some(start) = self.down_since.take() {
            self.down.push(Interval { start, end: horizon });
        }
        self.state.metrics.uptime_fraction = uptime_fraction(&self.down, horizon).ok();
        self.state
    }
}

/// Rebuilds the final state purely from records.
pub fn replay(records: &[LogRecord]) -> FinalState {
    let mut r = Replayer::new();
    for rec in records {
        r.apply(rec);
    }
    r.finish()
}

pub fn replay_file(path: impl AsRef<Path>) -> Result<FinalState, PersistError> {
    Ok(replay(&read_log(path)?))
}

/// Time-ordered samples of one attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadingSeries {
    pub device: DeviceId,
    pub attribute: String,
    pub points: Vec<(SimTime, AttributeValue)>,
}

/// Per-attribute index of every reading in a log, keyed by sample time.
#[derive(Debug, Clone, Default)]
pub struct ReadingStore {
    series: BTreeMap<(DeviceId, String), Vec<(SimTime, AttributeValue)>>,
}

impl ReadingStore {
    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a LogRecord>) -> Self {
        let mut store = ReadingStore::default();
        for rec in records {
            store.add(rec);
        }
        store
    }

    pub fn add(&mut self, rec: &LogRecord) {
        let RecordBody::Reading(r) = &rec.body else { return };
        for (k, v) in &r.values {
            let points = self.series.entry((r.device.clone(), k.clone())).or_default();
            if points.last().is_none_or(|(t, _)| *t < r.sampled_at) {
                points.push((r.sampled_at, v.clone()));
            }
        }
    }

    /// Points with `t0 <= t <= t1`. Unknown series yield an empty result.
    pub fn query_readings(&self, device: &DeviceId, attribute: &str, t0: SimTime, t1: SimTime) -> ReadingSeries {
        let points = self
            .series
            .get(&(device.clone(), attribute.to_string()))
            .map(|pts| {
                let lo = pts.partition_point(|(t, _)| *t < t0);
                let hi = pts.partition_point(|(t, _)| *t <= t1);
                pts[lo..hi.max(lo)].to_vec()
            })
            .unwrap_or_default();
        ReadingSeries { device: device.clone(), attribute: attribute.to_string(), points }
    }
}

/// Half-open down intervals of the gateway found in a log, closed at the
/// horizon if the gateway never came back.
pub fn down_intervals(records: &[LogRecord], horizon: SimTime) -> Vec<Interval> {
    let mut out = Vec::new();
    let mut since = None;
    for rec in records {
        match &rec.body {
            RecordBody::Lifecycle(Lifecycle::GatewayDown) => {
                since.get_or_insert(rec.t);
            }
            RecordBody::Lifecycle(Lifecycle::GatewayUp) => {
                if let Some(start) = since.take() {
                    out.push(Interval { start, end: rec.t });
                }
            }
            _ => {}
        }
    }
    if let Some(start) = since {
        out.push(Interval { start, end: horizon });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{ReadingRecord, Unit};

    fn lifecycle(seq: u64, t: u64, l: Lifecycle) -> LogRecord {
        LogRecord { seq, t: SimTime::from_secs(t), body: RecordBody::Lifecycle(l) }
    }

    fn reading(seq: u64, t: u64, temp: f64) -> LogRecord {
        let values = BTreeMap::from([("temperature".to_string(), AttributeValue::number(temp, Unit::Celsius))]);
        LogRecord {
            seq,
            t: SimTime::from_secs(t),
            body: RecordBody::Reading(ReadingRecord {
                device: DeviceId::from_ordinal(1),
                sampled_at: SimTime::from_secs(t),
                values,
            }),
        }
    }

    #[test]
    fn seq_must_be_contiguous_from_zero() {
        let mut log = EventLog::in_memory();
        assert!(matches!(
            log.append(&lifecycle(1, 0, Lifecycle::GatewayUp)),
            Err(PersistError::SeqGap { expected: 0, found: 1 })
        ));
        log.append(&lifecycle(0, 0, Lifecycle::GatewayUp)).unwrap();
        assert!(log.append(&lifecycle(0, 0, Lifecycle::GatewayUp)).is_err());
        log.append(&lifecycle(1, 0, Lifecycle::GatewayUp)).unwrap();
        assert_eq!(log.lines().len(), 2);
    }

    #[test]
    fn file_round_trip_many_records() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.jsonl");
        let mut log = EventLog::create(&path).unwrap();
        let records: Vec<LogRecord> = (0..100_000).map(|i| reading(i, i, 20.0 + (i % 17) as f64 / 8.0)).collect();
        for r in &records {
            log.append(r).unwrap();
        }
        log.flush().unwrap();
        assert_eq!(read_log(&path).unwrap(), records);
    }

    #[test]
    fn empty_log_replays_to_empty_world() {
        let s = replay(&[]);
        assert!(s.directory.is_empty() && s.actuators.is_empty());
        assert_eq!(s.metrics.uptime_fraction, None);
        assert_eq!(parse_log("").unwrap(), vec![]);
    }

    #[test]
    fn truncated_last_line_names_its_seq() {
        let mut log = EventLog::in_memory();
        for i in 0..3 {
            log.append(&reading(i, i, 21.0)).unwrap();
        }
        let mut text = log.lines().join("\n");
        text.push('\n');
        let full = text.len();
        text.push_str(&log.lines()[0][..20]);
        match parse_log(&text) {
            Err(PersistError::Corrupt { seq, offset, .. }) => {
                assert_eq!(seq, 3);
                assert!(offset >= full as u64);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn query_windows() {
        let recs: Vec<_> = (0..10).map(|i| reading(i, i * 10, i as f64)).collect();
        let store = ReadingStore::from_records(&recs);
        let id = DeviceId::from_ordinal(1);
        let all = store.query_readings(&id, "temperature", SimTime::ZERO, SimTime::from_secs(1000));
        assert_eq!(all.points.len(), 10);
        let some = store.query_readings(&id, "temperature", SimTime::from_secs(20), SimTime::from_secs(40));
        assert_eq!(some.points.len(), 3);
        let none = store.query_readings(&id, "temperature", SimTime::from_secs(15), SimTime::from_secs(15));
        assert!(none.points.is_empty());
        assert!(store.query_readings(&id, "ghost", SimTime::ZERO, SimTime::from_secs(99)).points.is_empty());
    }

    #[test]
    fn replay_counts_uptime() {
        let recs = vec![
            lifecycle(0, 500, Lifecycle::GatewayDown),
            lifecycle(1, 505, Lifecycle::GatewayUp),
            lifecycle(2, 1000, Lifecycle::RunEnd { horizon: SimTime::from_secs(1000) }),
        ];
        assert_eq!(replay(&recs).metrics.uptime_fraction, Some(0.995));
    }
}
