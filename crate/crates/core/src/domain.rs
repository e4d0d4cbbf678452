//! Shared vocabulary: simulated time, device identities and schemas, attribute
//! values, alerts, and the JSON Lines log record.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

// ---------------------------------------------------------------------------
// Time
// ---------------------------------------------------------------------------

const NANOS_PER_MILLI: u64 = 1_000_000;
const NANOS_PER_SEC: u64 = 1_000_000_000;

/// Simulated time in integer nanoseconds since the start of a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimTime(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub const fn from_nanos(ns: u64) -> Self {
        SimTime(ns)
    }

    pub const fn from_millis(ms: u64) -> Self {
        SimTime(ms * NANOS_PER_MILLI)
    }

    pub const fn from_secs(s: u64) -> Self {
        SimTime(s * NANOS_PER_SEC)
    }

    pub const fn as_nanos(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / NANOS_PER_SEC as f64
    }

    /// `self + d`, or `None` when the result would be negative or overflow.
    pub fn checked_offset(self, d: SimDuration) -> Option<SimTime> {
        if d.0 >= 0 {
            self.0.checked_add(d.0 as u64).map(SimTime)
        } else {
            self.0.checked_sub(d.0.unsigned_abs()).map(SimTime)
        }
    }

    pub fn saturating_since(self, earlier: SimTime) -> SimDuration {
        SimDuration(self.0.saturating_sub(earlier.0) as i64)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.3}s", self.as_secs_f64())
    }
}

/// Signed span of simulated time in nanoseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimDuration(i64);

impl SimDuration {
    pub const ZERO: SimDuration = SimDuration(0);

    pub const fn from_nanos(ns: i64) -> Self {
        SimDuration(ns)
    }

    pub const fn from_millis(ms: i64) -> Self {
        SimDuration(ms * NANOS_PER_MILLI as i64)
    }

    pub const fn from_secs(s: i64) -> Self {
        SimDuration(s * NANOS_PER_SEC as i64)
    }

    pub const fn from_mins(m: i64) -> Self {
        SimDuration(m * 60 * NANOS_PER_SEC as i64)
    }

    pub const fn as_nanos(self) -> i64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / NANOS_PER_SEC as f64
    }

    pub fn as_millis_f64(self) -> f64 {
        self.0 as f64 / NANOS_PER_MILLI as f64
    }

    pub fn as_mins_f64(self) -> f64 {
        self.as_secs_f64() / 60.0
    }

    pub const fn is_negative(self) -> bool {
        self.0 < 0
    }
}

impl Add<SimDuration> for SimTime {
    type Output = SimTime;

    /// Panics if the result is negative; use [`SimTime::checked_offset`] for
    /// untrusted durations.
    fn add(self, rhs: SimDuration) -> SimTime {
        self.checked_offset(rhs).expect("simulated time out of range")
    }
}

impl Sub for SimTime {
    type Output = SimDuration;

    fn sub(self, rhs: SimTime) -> SimDuration {
        SimDuration(self.0 as i64 - rhs.0 as i64)
    }
}

impl fmt::Display for SimDuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.3}ms", self.as_millis_f64())
    }
}

// ---------------------------------------------------------------------------
// Devices
// ---------------------------------------------------------------------------

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IdError {
    #[error("device id must not be empty")]
    Empty,
}

/// Registry key assigned by the gateway.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DeviceId(String);

impl DeviceId {
    pub fn new(value: impl Into<String>) -> Result<Self, IdError> {
        let value = value.into();
        if value.is_empty() {
            return Err(IdError::Empty);
        }
        Ok(DeviceId(value))
    }

    /// `d-` followed by the zero-padded registration ordinal.
    pub fn from_ordinal(ordinal: u32) -> Self {
        DeviceId(format!("d-{ordinal:04}"))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for DeviceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviceKind {
    Thermostat,
    AirConditioner,
    Furnace,
    FireMonitor,
    SmokeDetector,
    FireSprinkler,
    Siren,
    Window,
    MotionDetector,
    Webcam,
    Light,
    WaterLevelMonitor,
    LawnSprinkler,
    RfidReader,
    Door,
    GarageDoor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Unit {
    Celsius,
    Percent,
    Ppm,
    None,
}

impl Unit {
    /// Literal suffix used by the rule language.
    pub fn suffix(self) -> &'static str {
        match self {
            Unit::Celsius => "C",
            Unit::Percent => "%",
            Unit::Ppm => "ppm",
            Unit::None => "",
        }
    }
}

impl fmt::Display for Unit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Unit::Celsius => f.write_str("°C"),
            Unit::Percent => f.write_str("%"),
            Unit::Ppm => f.write_str("ppm"),
            Unit::None => f.write_str("(none)"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ValueType {
    Bool,
    Number(Unit),
    Text,
}

impl fmt::Display for ValueType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValueType::Bool => f.write_str("boolean"),
            ValueType::Number(Unit::None) => f.write_str("number"),
            ValueType::Number(u) => write!(f, "number ({u})"),
            ValueType::Text => f.write_str("string"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Access {
    ReadOnly,
    Writable,
    /// Computed by the gateway when it builds a rule snapshot; never part of
    /// the device-side state.
    Derived,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttrSpec {
    pub name: &'static str,
    pub ty: ValueType,
    pub access: Access,
}

const fn ro(name: &'static str, ty: ValueType) -> AttrSpec {
    AttrSpec { name, ty, access: Access::ReadOnly }
}

const fn rw(name: &'static str, ty: ValueType) -> AttrSpec {
    AttrSpec { name, ty, access: Access::Writable }
}

const TEMP: ValueType = ValueType::Number(Unit::Celsius);
const PCT: ValueType = ValueType::Number(Unit::Percent);
const PPM: ValueType = ValueType::Number(Unit::Ppm);
const PLAIN: ValueType = ValueType::Number(Unit::None);
const BOOL: ValueType = ValueType::Bool;

const THERMOSTAT: &[AttrSpec] = &[ro("temperature", TEMP)];
const SWITCH: &[AttrSpec] = &[rw("on", BOOL)];
const FIRE_MONITOR: &[AttrSpec] = &[ro("fire", BOOL)];
const SMOKE_DETECTOR: &[AttrSpec] = &[ro("smoke", BOOL), ro("level", PPM)];
const OPENABLE: &[AttrSpec] = &[rw("open", BOOL)];
const MOTION_DETECTOR: &[AttrSpec] = &[
    ro("motion", BOOL),
    ro("last_motion_at", PLAIN),
    AttrSpec { name: "idle_s", ty: PLAIN, access: Access::Derived },
];
const WEBCAM: &[AttrSpec] = &[rw("recording", BOOL)];
const WATER_LEVEL: &[AttrSpec] = &[ro("level", PCT)];
const RFID_READER: &[AttrSpec] = &[ro("last_card", ValueType::Text)];

impl DeviceKind {
    pub const ALL: [DeviceKind; 16] = [
        DeviceKind::Thermostat,
        DeviceKind::AirConditioner,
        DeviceKind::Furnace,
        DeviceKind::FireMonitor,
        DeviceKind::SmokeDetector,
        DeviceKind::FireSprinkler,
        DeviceKind::Siren,
        DeviceKind::Window,
        DeviceKind::MotionDetector,
        DeviceKind::Webcam,
        DeviceKind::Light,
        DeviceKind::WaterLevelMonitor,
        DeviceKind::LawnSprinkler,
        DeviceKind::RfidReader,
        DeviceKind::Door,
        DeviceKind::GarageDoor,
    ];

    /// Fixed attribute schema of this kind.
    pub fn schema(self) -> &'static [AttrSpec] {
        use DeviceKind::*;
        match self {
            Thermostat => THERMOSTAT,
            AirConditioner | Furnace | FireSprinkler | Siren | Light | LawnSprinkler => SWITCH,
            FireMonitor => FIRE_MONITOR,
            SmokeDetector => SMOKE_DETECTOR,
            Window | Door | GarageDoor => OPENABLE,
            MotionDetector => MOTION_DETECTOR,
            Webcam => WEBCAM,
            WaterLevelMonitor => WATER_LEVEL,
            RfidReader => RFID_READER,
        }
    }

    pub fn attr(self, name: &str) -> Option<&'static AttrSpec> {
        self.schema().iter().find(|a| a.name == name)
    }

    pub fn is_sensor(self) -> bool {
        self.schema().iter().all(|a| a.access != Access::Writable)
    }

    pub fn is_portal(self) -> bool {
        matches!(self, DeviceKind::Door | DeviceKind::GarageDoor)
    }

    /// Power-on state: booleans false, numbers zero, strings empty.
    pub fn initial_state(self, now: SimTime) -> DeviceState {
        let attributes = self
            .schema()
            .iter()
            .filter(|a| a.access != Access::Derived)
            .map(|a| {
                let v = match a.ty {
                    ValueType::Bool => AttributeValue::Bool(false),
                    ValueType::Number(unit) => AttributeValue::Number { value: 0.0, unit },
                    ValueType::Text => AttributeValue::Text(String::new()),
                };
                (a.name.to_string(), v)
            })
            .collect();
        DeviceState { attributes, last_update: now }
    }
}

impl fmt::Display for DeviceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = serde_json::to_value(self).map_err(|_| fmt::Error)?;
        f.write_str(v.as_str().unwrap_or("?"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceDescriptor {
    pub id: DeviceId,
    pub display_name: String,
    pub kind: DeviceKind,
    pub logical_address: String,
}

/// Name under which rules refer to a device: the display name with runs of
/// whitespace replaced by `_` (`"rfid reader"` becomes `rfid_reader`).
pub fn rule_handle(display_name: &str) -> String {
    display_name.split_whitespace().collect::<Vec<_>>().join("_")
}

impl DeviceDescriptor {
    pub fn handle(&self) -> String {
        rule_handle(&self.display_name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceState {
    pub attributes: BTreeMap<String, AttributeValue>,
    pub last_update: SimTime,
}

impl DeviceState {
    pub fn get(&self, attribute: &str) -> Option<&AttributeValue> {
        self.attributes.get(attribute)
    }

    pub fn bool(&self, attribute: &str) -> bool {
        matches!(self.attributes.get(attribute), Some(AttributeValue::Bool(true)))
    }
}

// ---------------------------------------------------------------------------
// Values
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AttributeValue {
    Bool(bool),
    Number { value: f64, unit: Unit },
    Text(String),
}

impl AttributeValue {
    pub fn number(value: f64, unit: Unit) -> Self {
        AttributeValue::Number { value, unit }
    }

    pub fn celsius(value: f64) -> Self {
        AttributeValue::Number { value, unit: Unit::Celsius }
    }

    pub fn value_type(&self) -> ValueType {
        match self {
            AttributeValue::Bool(_) => ValueType::Bool,
            AttributeValue::Number { unit, .. } => ValueType::Number(*unit),
            AttributeValue::Text(_) => ValueType::Text,
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            AttributeValue::Number { value, .. } => value.is_finite(),
            _ => true,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            AttributeValue::Number { value, .. } => Some(*value),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            AttributeValue::Bool(b) => Some(*b),
            _ => None,
        }
    }
}

impl fmt::Display for AttributeValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttributeValue::Bool(b) => write!(f, "{b}"),
            AttributeValue::Number { value, unit } => write!(f, "{value}{}", unit.suffix()),
            AttributeValue::Text(s) => write!(f, "{s:?}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CompareOp {
    #[serde(rename = "=")]
    Eq,
    #[serde(rename = "!=")]
    Ne,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
}

impl CompareOp {
    pub const ALL: [CompareOp; 6] =
        [CompareOp::Eq, CompareOp::Ne, CompareOp::Lt, CompareOp::Le, CompareOp::Gt, CompareOp::Ge];

    pub fn symbol(self) -> &'static str {
        match self {
            CompareOp::Eq => "=",
            CompareOp::Ne => "!=",
            CompareOp::Lt => "<",
            CompareOp::Le => "<=",
            CompareOp::Gt => ">",
            CompareOp::Ge => ">=",
        }
    }

    pub fn is_ordering(self) -> bool {
        !matches!(self, CompareOp::Eq | CompareOp::Ne)
    }
}

impl fmt::Display for CompareOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ValueError {
    #[error("cannot compare {left} with {right}")]
    TypeMismatch { left: ValueType, right: ValueType },
    #[error("operator {op} is not defined for {ty}")]
    Unordered { op: CompareOp, ty: ValueType },
}

/// Checks whether an operator is valid between two value types.
pub fn check_comparison(left: ValueType, right: ValueType, op: CompareOp) -> Result<(), ValueError> {
    if left != right {
        return Err(ValueError::TypeMismatch { left, right });
    }
    if op.is_ordering() && !matches!(left, ValueType::Number(_)) {
        return Err(ValueError::Unordered { op, ty: left });
    }
    Ok(())
}

/// Compares two attribute values. Numbers must share a unit; booleans and
/// strings only support `=` and `!=`.
pub fn compare_values(a: &AttributeValue, b: &AttributeValue, op: CompareOp) -> Result<bool, ValueError> {
    check_comparison(a.value_type(), b.value_type(), op)?;
    let ord = match (a, b) {
        (AttributeValue::Number { value: x, .. }, AttributeValue::Number { value: y, .. }) => {
            return Ok(match op {
                CompareOp::Eq => x == y,
                CompareOp::Ne => x != y,
                CompareOp::Lt => x < y,
                CompareOp::Le => x <= y,
                CompareOp::Gt => x > y,
                CompareOp::Ge => x >= y,
            });
        }
        (AttributeValue::Bool(x), AttributeValue::Bool(y)) => x == y,
        (AttributeValue::Text(x), AttributeValue::Text(y)) => x == y,
        _ => unreachable!("types checked above"),
    };
    Ok(if op == CompareOp::Eq { ord } else { !ord })
}

// ---------------------------------------------------------------------------
// Alerts
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Info,
    Warning,
    Critical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlertCategory {
    Security,
    Fire,
    Water,
    System,
}

impl AlertCategory {
    pub const ALL: [AlertCategory; 4] =
        [AlertCategory::Security, AlertCategory::Fire, AlertCategory::Water, AlertCategory::System];

    pub fn name(self) -> &'static str {
        match self {
            AlertCategory::Security => "security",
            AlertCategory::Fire => "fire",
            AlertCategory::Water => "water",
            AlertCategory::System => "system",
        }
    }
}

/// Alert source used when the gateway itself raises the alert.
pub const GATEWAY_SOURCE: &str = "gateway";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alert {
    pub time: SimTime,
    pub severity: Severity,
    pub category: AlertCategory,
    /// A device id, or `"gateway"`.
    pub source: String,
    pub message: String,
}

// ---------------------------------------------------------------------------
// Log records
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    Reading,
    Command,
    Alert,
    Lifecycle,
    Message,
}

/// One entry of the append-only event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub seq: u64,
    pub t: SimTime,
    #[serde(flatten)]
    pub body: RecordBody,
}

impl LogRecord {
    pub fn kind(&self) -> RecordKind {
        match self.body {
            RecordBody::Reading(_) => RecordKind::Reading,
            RecordBody::Command(_) => RecordKind::Command,
            RecordBody::Alert(_) => RecordKind::Alert,
            RecordBody::Lifecycle(_) => RecordKind::Lifecycle,
            RecordBody::Message(_) => RecordKind::Message,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum RecordBody {
    Reading(ReadingRecord),
    Command(CommandRecord),
    Alert(Alert),
    Lifecycle(Lifecycle),
    Message(MessageRecord),
}

impl RecordBody {
    fn is_finite(&self) -> bool {
        match self {
            RecordBody::Reading(r) => r.values.values().all(AttributeValue::is_finite),
            RecordBody::Command(c) => c.value.is_finite(),
            RecordBody::Lifecycle(Lifecycle::DeviceRegistered { state, .. }) => {
                state.attributes.values().all(AttributeValue::is_finite)
            }
            RecordBody::Lifecycle(Lifecycle::Shadowed { value, .. }) => value.is_finite(),
            _ => true,
        }
    }
}

/// A sensor sample taken on the device side and published to the gateway.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadingRecord {
    pub device: DeviceId,
    /// When the device took the sample; the record time is its arrival.
    pub sampled_at: SimTime,
    pub values: BTreeMap<String, AttributeValue>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommandPhase {
    /// Sent by the gateway.
    Issued,
    /// Applied on the device and changed its state.
    Applied,
    /// Delivered to the device, which already held the value.
    Noop,
    /// The gateway received the device's acknowledgement.
    Acked,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "by", rename_all = "snake_case")]
pub enum CommandOrigin {
    Rule { rule: String },
    Client { username: String },
    Access { portal: Portal },
    AutoClose { portal: Portal },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandRecord {
    pub phase: CommandPhase,
    pub device: DeviceId,
    pub attribute: String,
    pub value: AttributeValue,
    pub origin: CommandOrigin,
    /// Transport message carrying the command.
    pub message: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Portal {
    MainDoor,
    Garage,
}

impl Portal {
    pub const ALL: [Portal; 2] = [Portal::MainDoor, Portal::Garage];

    pub fn door_kind(self) -> DeviceKind {
        match self {
            Portal::MainDoor => DeviceKind::Door,
            Portal::Garage => DeviceKind::GarageDoor,
        }
    }

    pub fn for_kind(kind: DeviceKind) -> Option<Portal> {
        match kind {
            DeviceKind::Door => Some(Portal::MainDoor),
            DeviceKind::GarageDoor => Some(Portal::Garage),
            _ => None,
        }
    }
}

impl fmt::Display for Portal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Portal::MainDoor => "main_door",
            Portal::Garage => "garage",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AccessDecision {
    Allow,
    Deny,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub time: SimTime,
    pub reader: DeviceId,
    pub card_number: String,
    pub decision: AccessDecision,
    pub portal: Portal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JoinRejectReason {
    BadSecret,
    DuplicateName,
}

/// Run, gateway and security lifecycle events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Lifecycle {
    RunStart {
        scenario: String,
        seed: u64,
        duration: SimTime,
    },
    RunEnd {
        horizon: SimTime,
    },
    DeviceRegistered {
        descriptor: DeviceDescriptor,
        state: DeviceState,
    },
    JoinRejected {
        display_name: String,
        kind: DeviceKind,
        reason: JoinRejectReason,
    },
    GatewayDown,
    GatewayUp,
    LoginSucceeded {
        username: String,
    },
    LoginFailed {
        username: String,
        consecutive: u32,
        /// This failure completed a burst that triggers the lockout alert.
        lockout: bool,
    },
    Audit(AuditEntry),
    AutoCloseScheduled {
        portal: Portal,
        deadline: SimTime,
    },
    Shadowed {
        rule: String,
        device: DeviceId,
        attribute: String,
        value: AttributeValue,
        by_rule: String,
    },
    RuleError {
        rule: String,
        error: String,
    },
    MessageDropped {
        id: u64,
        src: String,
        dst: String,
        kind: MessageKind,
    },
    /// Delivered while the gateway was down and therefore ignored.
    Discarded {
        id: u64,
        kind: MessageKind,
    },
    Stimulus {
        name: String,
        detail: serde_json::Value,
    },
    FireExtinguished,
    /// A scripted or API client request the gateway refused.
    ClientRejected {
        username: String,
        error: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    Join,
    JoinAck,
    Reading,
    Command,
    Ack,
    Alert,
    Swipe,
}

/// A message that made it through the transport.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageRecord {
    pub id: u64,
    pub src: String,
    pub dst: String,
    pub kind: MessageKind,
    pub sent_at: SimTime,
    pub deliver_at: SimTime,
}

impl MessageRecord {
    pub fn latency(&self) -> SimDuration {
        self.deliver_at - self.sent_at
    }
}

#[derive(Debug, Error)]
pub enum EncodeError {
    #[error("record {seq} carries a non-finite number")]
    NonFinite { seq: u64 },
    #[error("record {seq} could not be serialized: {source}")]
    Serialize { seq: u64, source: serde_json::Error },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DecodeError {
    #[error("empty line")]
    Empty,
    #[error("malformed record at byte {offset}: {message}")]
    Malformed { offset: usize, message: String },
    #[error("missing required key `{key}`")]
    MissingKey { key: String },
    #[error("invalid record: {message}")]
    Invalid { message: String },
}

/// Serializes a record as one line of JSON with keys sorted at every level.
pub fn encode_record(record: &LogRecord) -> Result<String, EncodeError> {
    if !record.body.is_finite() {
        return Err(EncodeError::NonFinite { seq: record.seq });
    }
    // serde_json's map type is a BTreeMap unless `preserve_order` is enabled,
    // so routing through `Value` yields sorted keys.
    let value = serde_json::to_value(record)
        .map_err(|source| EncodeError::Serialize { seq: record.seq, source })?;
    Ok(value.to_string())
}

/// Parses one log line. Unknown keys are ignored.
pub fn decode_record(line: &str) -> Result<LogRecord, DecodeError> {
    let trimmed = line.trim_end_matches(['\n', '\r']);
    if trimmed.trim().is_empty() {
        return Err(DecodeError::Empty);
    }
    serde_json::from_str(trimmed).map_err(|e| {
        use serde_json::error::Category;
        match e.classify() {
            Category::Eof => DecodeError::Malformed { offset: trimmed.len(), message: e.to_string() },
            Category::Syntax | Category::Io => DecodeError::Malformed {
                offset: byte_offset(trimmed, e.line(), e.column()),
                message: e.to_string(),
            },
            Category::Data => {
                let msg = e.to_string();
                match missing_key(&msg) {
                    Some(key) => DecodeError::MissingKey { key },
                    None => DecodeError::Invalid { message: msg },
                }
            }
        }
    })
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let line_start: usize = text.split_inclusive('\n').take(line.saturating_sub(1)).map(str::len).sum();
    line_start + column.saturating_sub(1)
}

fn missing_key(message: &str) -> Option<String> {
    let rest = message.strip_prefix("missing field `")?;
    rest.split('`').next().map(str::to_string)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lifecycle(seq: u64) -> LogRecord {
        LogRecord { seq, t: SimTime::ZERO, body: RecordBody::Lifecycle(Lifecycle::GatewayUp) }
    }

    fn reading(value: f64) -> LogRecord {
        let mut values = BTreeMap::new();
        values.insert("temperature".to_string(), AttributeValue::celsius(value));
        LogRecord {
            seq: 4,
            t: SimTime::from_millis(1500),
            body: RecordBody::Reading(ReadingRecord { device: DeviceId::from_ordinal(1), sampled_at: SimTime::ZERO, values }),
        }
    }

    #[test]
    fn encodes_with_sorted_keys() {
        let line = encode_record(&lifecycle(1)).unwrap();
        assert_eq!(line, r#"{"kind":"lifecycle","payload":{"event":"gateway_up"},"seq":1,"t":0}"#);
        assert!(!line.contains('\n'));
    }

    #[test]
    fn round_trips_reading() {
        let rec = reading(28.125);
        let line = encode_record(&rec).unwrap();
        assert_eq!(decode_record(&line).unwrap(), rec);
    }

    #[test]
    fn nan_payload_is_rejected() {
        assert!(matches!(encode_record(&reading(f64::NAN)), Err(EncodeError::NonFinite { seq: 4 })));
        assert!(encode_record(&reading(f64::INFINITY)).is_err());
    }

    #[test]
    fn decode_errors() {
        assert_eq!(decode_record(""), Err(DecodeError::Empty));
        let neg = r#"{"kind":"lifecycle","payload":{"event":"gateway_up"},"seq":-1,"t":0}"#;
        assert!(matches!(decode_record(neg), Err(DecodeError::Invalid { .. })));
        let missing = r#"{"kind":"lifecycle","payload":{"event":"gateway_up"},"t":0}"#;
        assert_eq!(decode_record(missing), Err(DecodeError::MissingKey { key: "seq".into() }));
        match decode_record(r#"{"seq":1,"t":"#) {
            Err(DecodeError::Malformed { offset, .. }) => assert_eq!(offset, 13),
            other => panic!("unexpected {other:?}"),
        }
        match decode_record(r#"{"seq":1,"t":x}"#) {
            Err(DecodeError::Malformed { offset, .. }) => assert_eq!(offset, 13),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_keys_are_ignored() {
        let line = r#"{"extra":[1,2],"kind":"lifecycle","payload":{"event":"gateway_up","x":1},"seq":1,"t":0}"#;
        assert_eq!(decode_record(line).unwrap(), lifecycle(1));
    }

    #[test]
    fn compare_at_cooling_threshold() {
        let c = AttributeValue::celsius;
        assert!(compare_values(&c(29.0), &c(28.0), CompareOp::Gt).unwrap());
        assert!(!compare_values(&c(28.0), &c(28.0), CompareOp::Gt).unwrap());
        assert!(compare_values(&c(28.0), &c(28.0), CompareOp::Ge).unwrap());
    }

    #[test]
    fn compare_rejects_mixed_types() {
        let t = AttributeValue::Bool(true);
        assert!(compare_values(&t, &t, CompareOp::Eq).unwrap());
        assert!(!compare_values(&t, &t, CompareOp::Ne).unwrap());
        assert!(matches!(compare_values(&t, &t, CompareOp::Lt), Err(ValueError::Unordered { .. })));
        let pct = AttributeValue::number(5.0, Unit::Percent);
        let deg = AttributeValue::celsius(5.0);
        assert!(matches!(compare_values(&pct, &deg, CompareOp::Eq), Err(ValueError::TypeMismatch { .. })));
        let s = AttributeValue::Text("a".into());
        assert!(compare_values(&s, &t, CompareOp::Eq).is_err());
    }

    #[test]
    fn schemas_are_well_formed() {
        for kind in DeviceKind::ALL {
            let schema = kind.schema();
            assert!(!schema.is_empty(), "{kind}");
            let mut names: Vec<_> = schema.iter().map(|a| a.name).collect();
            names.sort_unstable();
            names.dedup();
            assert_eq!(names.len(), schema.len(), "{kind}");
            if !kind.is_sensor() {
                assert!(schema.iter().any(|a| a.access == Access::Writable));
            }
        }
    }

    #[test]
    fn handles_and_ids() {
        assert_eq!(rule_handle("rfid reader"), "rfid_reader");
        assert_eq!(DeviceId::from_ordinal(7).as_str(), "d-0007");
        assert!(DeviceId::new("").is_err());
    }
}
