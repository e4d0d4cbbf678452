//! The home gateway: device registration behind a shared join secret, client
//! login sessions, the device directory, command validation and redundant
//! command suppression.
//!
//! The gateway is a plain state machine. The simulation engine owns the
//! transport and the event log and calls into it when messages arrive.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use subtle::ConstantTimeEq;
use thiserror::Error;

use crate::devices::{check_writable, DevicesError};
use crate::domain::{
    Alert, AlertCategory, AttributeValue, DeviceDescriptor, DeviceId, DeviceKind, DeviceState, JoinRejectReason,
    Severity, SimDuration, SimTime, Unit, GATEWAY_SOURCE,
};
use crate::rules::WorldSnapshot;
use crate::simnet::SimRng;

/// Shared credential a device presents to join. Compared through SHA-256
/// digests with a constant-time equality, so the comparison cost does not
/// depend on how much of a guess matches.
#[derive(Clone)]
pub struct JoinSecret {
    digest: [u8; 32],
}

impl JoinSecret {
    pub fn new(value: &str) -> Result<Self, GatewayError> {
        if value.is_empty() {
            return Err(GatewayError::EmptySecret);
        }
        Ok(JoinSecret { digest: sha256(&[value.as_bytes()]) })
    }

    pub fn matches(&self, candidate: &str) -> bool {
        bool::from(sha256(&[candidate.as_bytes()]).ct_eq(&self.digest))
    }
}

impl std::fmt::Debug for JoinSecret {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("JoinSecret(..)")
    }
}

fn sha256(parts: &[&[u8]]) -> [u8; 32] {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    h.finalize().into()
}

fn password_digest(username: &str, password: &str) -> [u8; 32] {
    sha256(&[b"hearth-account", username.as_bytes(), password.as_bytes()])
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GatewayError {
    #[error("join secret must not be empty")]
    EmptySecret,
    #[error("account username must not be empty")]
    EmptyUsername,
    #[error("duplicate account `{0}`")]
    DuplicateAccount(String),
    #[error("session TTL must be positive")]
    NonPositiveTtl,
    #[error("lockout threshold must be at least 1")]
    ZeroThreshold,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AccountSpec {
    pub username: String,
    pub password: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewayConfig {
    pub join_secret: String,
    #[serde(default)]
    pub accounts: Vec<AccountSpec>,
    #[serde(default = "default_ttl")]
    pub session_ttl_s: u64,
    /// Consecutive login failures per username that raise a security alert.
    #[serde(default = "default_threshold")]
    pub lockout_threshold: u32,
}

fn default_ttl() -> u64 {
    30 * 60
}

fn default_threshold() -> u32 {
    3
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            join_secret: "hearth-home".into(),
            accounts: Vec::new(),
            session_ttl_s: default_ttl(),
            lockout_threshold: default_threshold(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkStatus {
    Online,
    Offline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Registration {
    pub descriptor: DeviceDescriptor,
    pub registered_at: SimTime,
    pub status: LinkStatus,
}

/// One directory row: the registration and the gateway's view of the state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectoryEntry {
    pub registration: Registration,
    pub state: DeviceState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JoinRequest {
    pub display_name: String,
    pub kind: DeviceKind,
    pub secret: String,
    pub state: DeviceState,
}

#[derive(Debug, Clone, PartialEq)]
pub enum JoinOutcome {
    /// A new registration.
    Registered(Registration),
    /// A retried join from the already-registered address; the ack is resent.
    AlreadyRegistered(DeviceId),
    Rejected { reason: JoinRejectReason, alert: Option<Alert> },
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuthError {
    /// Unknown user and wrong password are reported identically.
    #[error("invalid credentials")]
    InvalidCredentials,
    #[error("invalid session token")]
    InvalidToken,
    #[error("expired")]
    Expired,
    #[error("gateway unavailable")]
    Unavailable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionToken {
    pub token: String,
    pub username: String,
    pub expires_at: SimTime,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoginFailure {
    pub error: AuthError,
    pub username: String,
    /// Consecutive failures for this username, including this one.
    pub consecutive: u32,
    /// Raised on every `lockout_threshold`-th consecutive failure.
    pub alert: Option<Alert>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "error", content = "detail", rename_all = "snake_case")]
pub enum CommandError {
    #[error("unknown device")]
    UnknownDevice,
    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),
    #[error("read-only")]
    ReadOnly,
    #[error("type: {0}")]
    Type(String),
    #[error("{0}")]
    Auth(AuthError),
    #[error("device is not registered yet")]
    NotRegistered,
}

impl From<AuthError> for CommandError {
    fn from(e: AuthError) -> Self {
        CommandError::Auth(e)
    }
}

#[derive(Debug, Clone)]
struct Account {
    digest: [u8; 32],
}

#[derive(Debug, Clone)]
struct Pending {
    value: AttributeValue,
    expires: SimTime,
}

/// How long a sent command suppresses identical re-sends while its ack is
/// outstanding.
pub const PENDING_TIMEOUT: SimDuration = SimDuration::from_secs(1);

/// Resolves a bearer token against a session table.
pub fn session_user<'a>(
    sessions: &'a BTreeMap<String, SessionToken>,
    token: &str,
    now: SimTime,
) -> Result<&'a str, AuthError> {
    let session = sessions.get(token).ok_or(AuthError::InvalidToken)?;
    if now >= session.expires_at {
        return Err(AuthError::Expired);
    }
    Ok(&session.username)
}

#[derive(Debug, Clone)]
pub struct Gateway {
    up: bool,
    secret: JoinSecret,
    ttl: SimDuration,
    threshold: u32,
    accounts: BTreeMap<String, Account>,
    decoy: [u8; 32],
    failures: BTreeMap<String, u32>,
    sessions: BTreeMap<String, SessionToken>,
    token_rng: SimRng,
    directory: BTreeMap<DeviceId, DirectoryEntry>,
    by_name: BTreeMap<String, DeviceId>,
    by_address: BTreeMap<String, DeviceId>,
    pending: BTreeMap<(DeviceId, String), Pending>,
    registrations: u32,
}

impl Gateway {
    pub fn new(cfg: &GatewayConfig, seed: u64) -> Result<Self, GatewayError> {
        let secret = JoinSecret::new(&cfg.join_secret)?;
        if cfg.session_ttl_s == 0 {
            return Err(GatewayError::NonPositiveTtl);
        }
        if cfg.lockout_threshold == 0 {
            return Err(GatewayError::ZeroThreshold);
        }
        let mut accounts = BTreeMap::new();
        for a in &cfg.accounts {
            if a.username.is_empty() {
                return Err(GatewayError::EmptyUsername);
            }
            let acct = Account { digest: password_digest(&a.username, &a.password) };
            if accounts.insert(a.username.clone(), acct).is_some() {
                return Err(GatewayError::DuplicateAccount(a.username.clone()));
            }
        }
        Ok(Gateway {
            up: true,
            secret,
            ttl: SimDuration::from_secs(cfg.session_ttl_s as i64),
            threshold: cfg.lockout_threshold,
            accounts,
            decoy: password_digest("", "\u{0}decoy"),
            failures: BTreeMap::new(),
            sessions: BTreeMap::new(),
            token_rng: SimRng::stream(seed, "session-tokens"),
            directory: BTreeMap::new(),
            by_name: BTreeMap::new(),
            by_address: BTreeMap::new(),
            pending: BTreeMap::new(),
            registrations: 0,
        })
    }

    pub fn is_up(&self) -> bool {
        self.up
    }

    /// Scripted outage. Registrations and sessions survive (they are
    /// persisted); in-flight command bookkeeping does not.
    pub fn set_up(&mut self, up: bool) {
        self.up = up;
        if !up {
            self.pending.clear();
        }
    }

    pub fn handle_join(&mut self, req: &JoinRequest, address: &str, now: SimTime) -> JoinOutcome {
        if !self.secret.matches(&req.secret) {
            let alert = Alert {
                time: now,
                severity: Severity::Critical,
                category: AlertCategory::Security,
                source: GATEWAY_SOURCE.to_string(),
                message: format!("join with bad secret from {address} as \"{}\"", req.display_name),
            };
            return JoinOutcome::Rejected { reason: JoinRejectReason::BadSecret, alert: Some(alert) };
        }
        if let Some(id) = self.by_name.get(&req.display_name) {
            if self.by_address.get(address) == Some(id) {
                return JoinOutcome::AlreadyRegistered(id.clone());
            }
            return JoinOutcome::Rejected { reason: JoinRejectReason::DuplicateName, alert: None };
        }
        if req.display_name.trim().is_empty() {
            return JoinOutcome::Rejected { reason: JoinRejectReason::DuplicateName, alert: None };
        }
        self.registrations += 1;
        let id = DeviceId::from_ordinal(self.registrations);
        let descriptor = DeviceDescriptor {
            id: id.clone(),
            display_name: req.display_name.clone(),
            kind: req.kind,
            logical_address: address.to_string(),
        };
        let registration = Registration { descriptor, registered_at: now, status: LinkStatus::Online };
        self.by_name.insert(req.display_name.clone(), id.clone());
        self.by_address.insert(address.to_string(), id.clone());
        self.directory.insert(id, DirectoryEntry { registration: registration.clone(), state: req.state.clone() });
        JoinOutcome::Registered(registration)
    }

    pub fn authenticate_client(
        &mut self,
        username: &str,
        password: &str,
        now: SimTime,
    ) -> Result<SessionToken, LoginFailure> {
        let offered = password_digest(username, password);
        let ok = match self.accounts.get(username) {
            Some(acct) => bool::from(offered.ct_eq(&acct.digest)),
            None => {
                let _ = bool::from(offered.ct_eq(&self.decoy));
                false
            }
        };
        if ok {
            self.failures.remove(username);
            let token = format!("{:016x}{:016x}", self.token_rng.next_u64(), self.token_rng.next_u64());
            let session = SessionToken { token: token.clone(), username: username.to_string(), expires_at: now + self.ttl };
            self.sessions.insert(token, session.clone());
            return Ok(session);
        }
        let count = self.failures.entry(username.to_string()).or_insert(0);
        *count += 1;
        let consecutive = *count;
        let alert = consecutive.is_multiple_of(self.threshold).then(|| Alert {
            time: now,
            severity: Severity::Critical,
            category: AlertCategory::Security,
            source: GATEWAY_SOURCE.to_string(),
            message: format!("{consecutive} consecutive failed logins for \"{username}\""),
        });
        Err(LoginFailure { error: AuthError::InvalidCredentials, username: username.to_string(), consecutive, alert })
    }

    /// Resolves a bearer token to its username.
    pub fn check_session(&self, token: &str, now: SimTime) -> Result<&str, AuthError> {
        session_user(&self.sessions, token, now)
    }

    /// Issued sessions by token, expired ones included.
    pub fn sessions(&self) -> &BTreeMap<String, SessionToken> {
        &self.sessions
    }

    pub fn list_devices(&self, token: &str, now: SimTime) -> Result<Vec<(DeviceDescriptor, DeviceState)>, AuthError> {
        self.check_session(token, now)?;
        Ok(self.entries().map(|e| (e.registration.descriptor.clone(), e.state.clone())).collect())
    }

    /// Directory rows in `DeviceId` order.
    pub fn entries(&self) -> impl Iterator<Item = &DirectoryEntry> {
        self.directory.values()
    }

    pub fn directory(&self) -> &BTreeMap<DeviceId, DirectoryEntry> {
        &self.directory
    }

    pub fn entry(&self, id: &DeviceId) -> Option<&DirectoryEntry> {
        self.directory.get(id)
    }

    pub fn id_by_name(&self, display_name: &str) -> Option<&DeviceId> {
        self.by_name.get(display_name)
    }

    pub fn id_by_address(&self, address: &str) -> Option<&DeviceId> {
        self.by_address.get(address)
    }

    /// Schema check of a write against the directory.
    pub fn validate_command(
        &self,
        device: &DeviceId,
        attribute: &str,
        value: &AttributeValue,
    ) -> Result<&DirectoryEntry, CommandError> {
        let entry = self.directory.get(device).ok_or(CommandError::UnknownDevice)?;
        check_writable(entry.registration.descriptor.kind, attribute, value).map_err(|e| match e {
            DevicesError::UnknownAttribute { attribute, .. } => CommandError::UnknownAttribute(attribute),
            DevicesError::ReadOnly { .. } => CommandError::ReadOnly,
            other => CommandError::Type(other.to_string()),
        })?;
        Ok(entry)
    }

    /// Merges a sensor sample into the directory.
    pub fn apply_reading(&mut self, device: &DeviceId, values: &BTreeMap<String, AttributeValue>, sampled_at: SimTime) {
        if let Some(entry) = self.directory.get_mut(device) {
            for (k, v) in values {
                entry.state.attributes.insert(k.clone(), v.clone());
            }
            entry.state.last_update = entry.state.last_update.max(sampled_at);
        }
    }

    /// Records a device's acknowledgement of a command.
    pub fn apply_ack(&mut self, device: &DeviceId, attribute: &str, value: &AttributeValue, at: SimTime) {
        if let Some(entry) = self.directory.get_mut(device) {
            entry.state.attributes.insert(attribute.to_string(), value.clone());
            entry.state.last_update = entry.state.last_update.max(at);
        }
        let key = (device.clone(), attribute.to_string());
        if self.pending.get(&key).is_some_and(|p| &p.value == value) {
            self.pending.remove(&key);
        }
    }

    /// False when the directory already shows `value` or an identical command
    /// is still awaiting its ack.
    pub fn needs_command(&self, device: &DeviceId, attribute: &str, value: &AttributeValue, now: SimTime) -> bool {
        let key = (device.clone(), attribute.to_string());
        if let Some(p) = self.pending.get(&key) {
            if now < p.expires {
                return &p.value != value;
            }
        }
        self.directory.get(device).and_then(|e| e.state.get(attribute)) != Some(value)
    }

    pub fn mark_pending(&mut self, device: &DeviceId, attribute: &str, value: &AttributeValue, now: SimTime) {
        self.pending.insert(
            (device.clone(), attribute.to_string()),
            Pending { value: value.clone(), expires: now + PENDING_TIMEOUT },
        );
    }

    /// Value the gateway expects an attribute to hold once outstanding
    /// commands land.
    pub fn expected(&self, device: &DeviceId, attribute: &str, now: SimTime) -> Option<&AttributeValue> {
        let key = (device.clone(), attribute.to_string());
        match self.pending.get(&key) {
            Some(p) if now < p.expires => Some(&p.value),
            _ => self.directory.get(device).and_then(|e| e.state.get(attribute)),
        }
    }

    /// Rule-evaluation view of the directory at `now`, including the derived
    /// `idle_s` of motion detectors.
    pub fn snapshot(&self, now: SimTime) -> WorldSnapshot {
        let mut snap = WorldSnapshot::default();
        for entry in self.directory.values() {
            let d = &entry.registration.descriptor;
            let handle = d.handle();
            for (k, v) in &entry.state.attributes {
                snap.insert(&handle, &d.id, k, v.clone());
            }
            if d.kind == DeviceKind::MotionDetector {
                if let Some(last) = entry.state.get("last_motion_at").and_then(AttributeValue::as_f64) {
                    let idle = (now.as_secs_f64() - last).max(0.0);
                    snap.insert(&handle, &d.id, "idle_s", AttributeValue::number(idle, Unit::None));
                }
            }
        }
        snap
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> GatewayConfig {
        GatewayConfig {
            accounts: vec![AccountSpec { username: "alice".into(), password: "pw".into() }],
            ..GatewayConfig::default()
        }
    }

    fn join(name: &str, kind: DeviceKind, secret: &str) -> JoinRequest {
        JoinRequest {
            display_name: name.into(),
            kind,
            secret: secret.into(),
            state: kind.initial_state(SimTime::ZERO),
        }
    }

    #[test]
    fn join_registers_with_ordinal_ids() {
        let mut gw = Gateway::new(&cfg(), 1).unwrap();
        let out = gw.handle_join(&join("rfid reader", DeviceKind::RfidReader, "hearth-home"), "node-01", SimTime::ZERO);
        let JoinOutcome::Registered(reg) = out else { panic!("{out:?}") };
        assert_eq!(reg.descriptor.id.as_str(), "d-0001");
        assert_eq!(gw.directory().len(), 1);
        assert_eq!(reg.descriptor.handle(), "rfid_reader");
    }

    #[test]
    fn bad_secret_alerts_and_duplicate_does_not() {
        let mut gw = Gateway::new(&cfg(), 1).unwrap();
        match gw.handle_join(&join("x", DeviceKind::Light, "nope"), "node-01", SimTime::ZERO) {
            JoinOutcome::Rejected { reason: JoinRejectReason::BadSecret, alert: Some(a) } => {
                assert_eq!(a.category, AlertCategory::Security);
                assert_eq!(a.severity, Severity::Critical);
            }
            other => panic!("{other:?}"),
        }
        gw.handle_join(&join("x", DeviceKind::Light, "hearth-home"), "node-01", SimTime::ZERO);
        let again = gw.handle_join(&join("x", DeviceKind::Light, "hearth-home"), "node-02", SimTime::ZERO);
        assert_eq!(again, JoinOutcome::Rejected { reason: JoinRejectReason::DuplicateName, alert: None });
        let retry = gw.handle_join(&join("x", DeviceKind::Light, "hearth-home"), "node-01", SimTime::ZERO);
        assert!(matches!(retry, JoinOutcome::AlreadyRegistered(_)));
        assert_eq!(gw.directory().len(), 1);
    }

    #[test]
    fn login_lockout_alert_every_third_failure() {
        let mut gw = Gateway::new(&cfg(), 1).unwrap();
        let mut alerts = 0;
        for i in 1..=7 {
            let f = gw.authenticate_client("alice", "wrong", SimTime::ZERO).unwrap_err();
            assert_eq!(f.consecutive, i);
            alerts += f.alert.is_some() as u32;
        }
        assert_eq!(alerts, 2);
        gw.authenticate_client("alice", "pw", SimTime::ZERO).unwrap();
        let f = gw.authenticate_client("alice", "wrong", SimTime::ZERO).unwrap_err();
        assert_eq!(f.consecutive, 1);
    }

    #[test]
    fn unknown_user_and_bad_password_are_indistinguishable() {
        let mut gw = Gateway::new(&cfg(), 1).unwrap();
        let a = gw.authenticate_client("alice", "wrong", SimTime::ZERO).unwrap_err();
        let b = gw.authenticate_client("mallory", "pw", SimTime::ZERO).unwrap_err();
        assert_eq!(a.error, b.error);
        assert_eq!(a.error.to_string(), b.error.to_string());
    }

    #[test]
    fn sessions_expire() {
        let mut gw = Gateway::new(&cfg(), 1).unwrap();
        let s = gw.authenticate_client("alice", "pw", SimTime::ZERO).unwrap();
        assert_eq!(s.token.len(), 32);
        assert!(gw.list_devices(&s.token, SimTime::from_secs(60)).unwrap().is_empty());
        assert_eq!(gw.list_devices(&s.token, SimTime::from_secs(1800)), Err(AuthError::Expired));
        assert_eq!(gw.list_devices("forged", SimTime::ZERO), Err(AuthError::InvalidToken));
    }

    #[test]
    fn command_validation() {
        let mut gw = Gateway::new(&cfg(), 1).unwrap();
        gw.handle_join(&join("light", DeviceKind::Light, "hearth-home"), "node-01", SimTime::ZERO);
        gw.handle_join(&join("fire monitor", DeviceKind::FireMonitor, "hearth-home"), "node-02", SimTime::ZERO);
        let light = DeviceId::from_ordinal(1);
        let fire = DeviceId::from_ordinal(2);
        assert!(gw.validate_command(&light, "on", &AttributeValue::Bool(true)).is_ok());
        assert_eq!(
            gw.validate_command(&fire, "fire", &AttributeValue::Bool(true)).unwrap_err(),
            CommandError::ReadOnly
        );
        assert_eq!(
            gw.validate_command(&DeviceId::from_ordinal(9), "on", &AttributeValue::Bool(true)).unwrap_err(),
            CommandError::UnknownDevice
        );
        assert!(matches!(
            gw.validate_command(&light, "on", &AttributeValue::Text("yes".into())),
            Err(CommandError::Type(_))
        ));
    }

    #[test]
    fn redundant_commands_are_suppressed_until_timeout() {
        let mut gw = Gateway::new(&cfg(), 1).unwrap();
        gw.handle_join(&join("light", DeviceKind::Light, "hearth-home"), "node-01", SimTime::ZERO);
        let id = DeviceId::from_ordinal(1);
        let on = AttributeValue::Bool(true);
        let t0 = SimTime::from_secs(5);
        assert!(!gw.needs_command(&id, "on", &AttributeValue::Bool(false), t0));
        assert!(gw.needs_command(&id, "on", &on, t0));
        gw.mark_pending(&id, "on", &on, t0);
        assert!(!gw.needs_command(&id, "on", &on, t0 + SimDuration::from_millis(500)));
        assert!(gw.needs_command(&id, "on", &on, t0 + SimDuration::from_secs(1)));
        gw.apply_ack(&id, "on", &on, t0 + SimDuration::from_millis(5));
        assert!(!gw.needs_command(&id, "on", &on, t0 + SimDuration::from_secs(2)));
    }

    #[test]
    fn snapshot_derives_idle_time() {
        let mut gw = Gateway::new(&cfg(), 1).unwrap();
        gw.handle_join(&join("motion detector", DeviceKind::MotionDetector, "hearth-home"), "n", SimTime::ZERO);
        let id = DeviceId::from_ordinal(1);
        let values = BTreeMap::from([("last_motion_at".to_string(), AttributeValue::number(10.0, Unit::None))]);
        gw.apply_reading(&id, &values, SimTime::from_secs(10));
        let snap = gw.snapshot(SimTime::from_secs(75));
        let idle = snap.values.get(&(id, "idle_s".to_string())).and_then(AttributeValue::as_f64);
        assert_eq!(idle, Some(65.0));
    }
}
