//! RFID access control for the main door and garage.
//!
//! A swipe is checked against a per-portal allow-list. An allowed swipe opens
//! the portal and (re)arms its auto-close timer; a denied swipe raises a
//! security alert. Timers carry a generation number so that re-arming makes
//! every older timer a no-op.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::domain::{
    AccessDecision, Alert, AlertCategory, AuditEntry, DeviceId, DeviceKind, Portal, Severity, SimDuration, SimTime,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AccessError {
    #[error("card number must be a non-empty string of decimal digits")]
    BadCardNumber,
    #[error("{0} is not an RFID reader")]
    NotAReader(DeviceId),
    #[error("reader {0} guards no portal")]
    UnmappedReader(DeviceId),
    #[error("auto_close_after must be positive")]
    NonPositiveAutoClose,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct RfidCard(String);

impl RfidCard {
    pub fn new(number: impl Into<String>) -> Result<Self, AccessError> {
        let number = number.into();
        if number.is_empty() || !number.bytes().all(|b| b.is_ascii_digit()) {
            return Err(AccessError::BadCardNumber);
        }
        Ok(RfidCard(number))
    }

    pub fn number(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for RfidCard {
    type Error = AccessError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        RfidCard::new(value)
    }
}

impl From<RfidCard> for String {
    fn from(card: RfidCard) -> String {
        card.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AccessPolicy {
    #[serde(default)]
    pub allow_list: BTreeMap<RfidCard, BTreeSet<Portal>>,
    #[serde(rename = "auto_close_after_s", with = "seconds", default = "default_auto_close")]
    pub auto_close_after: SimDuration,
}

/// Portals close this long after their last authorization unless the policy
/// says otherwise.
pub const AUTO_CLOSE_DEFAULT: SimDuration = SimDuration::from_secs(30);

fn default_auto_close() -> SimDuration {
    AUTO_CLOSE_DEFAULT
}

impl Default for AccessPolicy {
    fn default() -> Self {
        AccessPolicy { allow_list: BTreeMap::new(), auto_close_after: default_auto_close() }
    }
}

impl AccessPolicy {
    pub fn validate(&self) -> Result<(), AccessError> {
        if self.auto_close_after <= SimDuration::ZERO {
            return Err(AccessError::NonPositiveAutoClose);
        }
        Ok(())
    }

    pub fn enroll(&mut self, card: RfidCard, portals: impl IntoIterator<Item = Portal>) {
        self.allow_list.entry(card).or_default().extend(portals);
    }
}

mod seconds {
    use super::*;

    pub fn serialize<S: Serializer>(d: &SimDuration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<SimDuration, D::Error> {
        let secs = f64::deserialize(d)?;
        if !secs.is_finite() {
            return Err(serde::de::Error::custom("duration must be finite"));
        }
        Ok(SimDuration::from_nanos((secs * 1e9).round() as i64))
    }
}

/// Allow iff the card is enrolled for this portal. Unknown cards are denied.
pub fn validate_card(card: &RfidCard, portal: Portal, policy: &AccessPolicy) -> AccessDecision {
    match policy.allow_list.get(card) {
        Some(portals) if portals.contains(&portal) => AccessDecision::Allow,
        _ => AccessDecision::Deny,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CloseTimer {
    pub portal: Portal,
    pub deadline: SimTime,
    pub generation: u64,
}

/// What a swipe caused. The caller routes the open command, schedules the
/// timer and stores the alert.
#[derive(Debug, Clone, PartialEq)]
pub struct SwipeEffects {
    pub audit: AuditEntry,
    /// Door device to set `open = true`, if one is registered for the portal.
    pub open: Option<DeviceId>,
    pub timer: Option<CloseTimer>,
    pub alert: Option<Alert>,
}

/// Auto-close decision for an expired timer: close only if the timer is still
/// the current one for its portal and the portal is open.
pub fn auto_close_check(portal_open: bool, fired: &CloseTimer, current: Option<&CloseTimer>) -> bool {
    portal_open && current.is_some_and(|c| c.generation == fired.generation)
}

#[derive(Debug, Clone, Default)]
pub struct AccessControl {
    policy: AccessPolicy,
    readers: BTreeMap<DeviceId, Portal>,
    doors: BTreeMap<Portal, DeviceId>,
    timers: BTreeMap<Portal, CloseTimer>,
    next_generation: u64,
    audit: Vec<AuditEntry>,
}

impl AccessControl {
    pub fn new(policy: AccessPolicy) -> Result<Self, AccessError> {
        policy.validate()?;
        Ok(AccessControl { policy, ..AccessControl::default() })
    }

    pub fn policy(&self) -> &AccessPolicy {
        &self.policy
    }

    pub fn audit_log(&self) -> &[AuditEntry] {
        &self.audit
    }

    pub fn add_reader(&mut self, reader: DeviceId, portal: Portal) {
        self.readers.insert(reader, portal);
    }

    /// Registers a door device; the first one of each portal kind wins.
    pub fn add_door(&mut self, id: DeviceId, kind: DeviceKind) {
        if let Some(portal) = Portal::for_kind(kind) {
            self.doors.entry(portal).or_insert(id);
        }
    }

    pub fn reader_for(&self, portal: Portal) -> Option<&DeviceId> {
        self.readers.iter().find(|(_, p)| **p == portal).map(|(id, _)| id)
    }

    pub fn portal_of_reader(&self, reader: &DeviceId) -> Option<Portal> {
        self.readers.get(reader).copied()
    }

    pub fn portal_of_door(&self, door: &DeviceId) -> Option<Portal> {
        self.doors.iter().find(|(_, id)| *id == door).map(|(p, _)| *p)
    }

    pub fn door(&self, portal: Portal) -> Option<&DeviceId> {
        self.doors.get(&portal)
    }

    pub fn current_timer(&self, portal: Portal) -> Option<&CloseTimer> {
        self.timers.get(&portal)
    }

    /// Arms (or re-arms) the auto-close timer of `portal` from `now`.
    pub fn arm_timer(&mut self, portal: Portal, now: SimTime) -> CloseTimer {
        self.next_generation += 1;
        let timer = CloseTimer { portal, deadline: now + self.policy.auto_close_after, generation: self.next_generation };
        self.timers.insert(portal, timer);
        timer
    }

    /// Re-arms a timer that fired while its close command could not be
    /// confirmed, keeping the portal covered.
    pub fn rearm_after(&mut self, fired: &CloseTimer, delay: SimDuration) -> CloseTimer {
        self.next_generation += 1;
        let timer = CloseTimer { portal: fired.portal, deadline: fired.deadline + delay, generation: self.next_generation };
        self.timers.insert(fired.portal, timer);
        timer
    }

    pub fn on_swipe(
        &mut self,
        reader: &DeviceId,
        reader_kind: DeviceKind,
        card: &RfidCard,
        now: SimTime,
    ) -> Result<SwipeEffects, AccessError> {
        if reader_kind != DeviceKind::RfidReader {
            return Err(AccessError::NotAReader(reader.clone()));
        }
        let portal = self.portal_of_reader(reader).ok_or_else(|| AccessError::UnmappedReader(reader.clone()))?;
        let decision = validate_card(card, portal, &self.policy);
        let audit = AuditEntry {
            time: now,
            reader: reader.clone(),
            card_number: card.number().to_string(),
            decision,
            portal,
        };
        self.audit.push(audit.clone());
        Ok(match decision {
            AccessDecision::Allow => SwipeEffects {
                audit,
                open: self.doors.get(&portal).cloned(),
                timer: Some(self.arm_timer(portal, now)),
                alert: None,
            },
            AccessDecision::Deny => SwipeEffects {
                audit,
                open: None,
                timer: None,
                alert: Some(Alert {
                    time: now,
                    severity: Severity::Critical,
                    category: AlertCategory::Security,
                    source: reader.to_string(),
                    message: format!("unknown RFID card {} at {portal}", card.number()),
                }),
            },
        })
    }
}
