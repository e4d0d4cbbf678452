//! The simulation engine: devices, environment, transport and gateway wired
//! together on one virtual clock.
//!
//! Devices power on at staggered times and join the gateway. Registered
//! sensors sample the environment every second and publish a reading when a
//! value changes or 10 s after their previous one. The gateway evaluates the
//! rules on every reading, acknowledgement and registration and once per
//! second, and sends commands that devices apply and acknowledge. Everything
//! observable is appended to the event log.
//!
//! External inputs (API calls, injected stimuli) are plain method calls that
//! act at the engine's current virtual time; callers advance the clock with
//! [`Engine::advance_to`] between batches of inputs.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::access::{auto_close_check, validate_card, AccessControl, AccessError, CloseTimer, RfidCard};
use crate::devices::{apply_command, read_sensor, step_environment, Actuators, Environment, SensorContext};
use crate::domain::{
    AccessDecision, Alert, AlertCategory, AttributeValue, AuditEntry, CommandOrigin, CommandPhase, CommandRecord,
    DeviceDescriptor, DeviceId, DeviceKind, DeviceState, JoinRejectReason, Lifecycle, LogRecord, MessageKind,
    MessageRecord, Portal, ReadingRecord, RecordBody, Severity, SimDuration, SimTime, GATEWAY_SOURCE,
};
use crate::gateway::{
    session_user, AuthError, CommandError, DirectoryEntry, Gateway, JoinOutcome, JoinRequest, SessionToken,
    PENDING_TIMEOUT,
};
use crate::persistence::{EventLog, FinalState, PersistError, ReadingSeries, ReadingStore};
use crate::rules::{evaluate_all, RuleAst};
use crate::scenario::{secs, Scenario, ScenarioError, Stimulus};
use crate::simnet::{
    run_report, uptime_fraction, Interval, MessageDraft, MetricsTargets, NetConfig, Network, Report, RunMetrics,
    Scheduler, SendOutcome, Target,
};

/// Endpoint name of the gateway on the simulated network.
pub const GATEWAY_ADDRESS: &str = "gateway";
/// Environment and evaluation period.
pub const TICK: SimDuration = SimDuration::from_secs(1);
/// A sensor whose values have not changed re-publishes after this long.
pub const HEARTBEAT: SimDuration = SimDuration::from_secs(10);
/// A device whose join went unanswered retries after this long.
pub const JOIN_RETRY: SimDuration = SimDuration::from_secs(2);
/// Power-on stagger between consecutive roster entries.
pub const JOIN_STAGGER: SimDuration = SimDuration::from_millis(10);

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("log: {0}")]
    Log(#[from] PersistError),
    #[error("engine: {0}")]
    Internal(String),
}

impl EngineError {
    pub fn is_integrity(&self) -> bool {
        match self {
            EngineError::Log(e) => e.is_integrity(),
            EngineError::Internal(_) => true,
            EngineError::Scenario(_) => false,
        }
    }
}

/// Message payloads on the simulated network.
#[derive(Debug, Clone, PartialEq)]
enum Wire {
    Join(JoinRequest),
    JoinAck(Option<DeviceId>),
    Reading { device: DeviceId, sampled_at: SimTime, values: BTreeMap<String, AttributeValue> },
    Swipe { device: DeviceId, card: RfidCard },
    Command { device: DeviceId, attribute: String, value: AttributeValue, origin: CommandOrigin },
    Ack { device: DeviceId, attribute: String, value: AttributeValue, origin: CommandOrigin, command: u64 },
}

impl Wire {
    fn kind(&self) -> MessageKind {
        match self {
            Wire::Join(_) => MessageKind::Join,
            Wire::JoinAck(_) => MessageKind::JoinAck,
            Wire::Reading { .. } => MessageKind::Reading,
            Wire::Swipe { .. } => MessageKind::Swipe,
            Wire::Command { .. } => MessageKind::Command,
            Wire::Ack { .. } => MessageKind::Ack,
        }
    }
}

#[derive(Debug, Clone)]
enum Event {
    Deliver(crate::simnet::Message<Wire>),
    Tick,
    PowerOn(usize),
    JoinTimeout { device: usize, attempt: u32 },
    Stimulus(Stimulus),
    MotionEnd(String),
    AutoClose(CloseTimer),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum JoinPhase {
    Off,
    Joining(u32),
    Registered,
    Rejected,
}

#[derive(Debug, Clone)]
struct DeviceRt {
    name: String,
    kind: DeviceKind,
    address: String,
    secret: Option<String>,
    portal: Option<Portal>,
    ctx: SensorContext,
    state: DeviceState,
    phase: JoinPhase,
    id: Option<DeviceId>,
    last_sent: Option<SimTime>,
    last_values: BTreeMap<String, AttributeValue>,
}

/// Outcome of a client command, known as soon as it is sent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommandAck {
    pub message: u64,
    pub delivered: bool,
    pub deliver_at: Option<SimTime>,
}

/// Result of an injected swipe.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwipeAck {
    pub reader: DeviceId,
    pub portal: Portal,
    /// Decision the gateway will take if the swipe message arrives.
    pub decision: AccessDecision,
    pub message: u64,
    pub delivered: bool,
}

#[derive(Debug, Error, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "error", content = "detail", rename_all = "snake_case")]
pub enum SwipeError {
    #[error("{0}")]
    Auth(AuthError),
    #[error("no registered reader guards {0}")]
    NoReader(Portal),
    #[error("{0}")]
    Card(String),
}

/// One stored alert with the seq of its log record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredAlert {
    pub seq: u64,
    #[serde(flatten)]
    pub alert: Alert,
}

pub struct Engine {
    name: String,
    seed: u64,
    horizon: SimTime,
    sched: Scheduler<Event>,
    net: Network,
    env: Environment,
    thermal: crate::devices::ThermalParams,
    hazard: crate::devices::HazardParams,
    outdoor: crate::devices::OutdoorSchedule,
    lawn_on_below: f64,
    held: Actuators,
    zones: BTreeMap<String, u32>,
    devices: Vec<DeviceRt>,
    by_id: BTreeMap<DeviceId, usize>,
    by_address: BTreeMap<String, usize>,
    gateway: Gateway,
    access: AccessControl,
    rules: Vec<RuleAst>,
    active_rules: Vec<RuleAst>,
    clients: BTreeMap<String, String>,
    join_secret: String,
    log: EventLog,
    alerts: Vec<StoredAlert>,
    metrics: RunMetrics,
    down_since: Option<SimTime>,
    down: Vec<Interval>,
    finished: bool,
    readings: Option<ReadingStore>,
}

/// Read-only copy of what API clients may see, taken at one virtual instant.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EngineView {
    pub now: SimTime,
    pub horizon: SimTime,
    pub finished: bool,
    pub gateway_up: bool,
    pub directory: Vec<DirectoryEntry>,
    #[serde(skip)]
    pub sessions: BTreeMap<String, SessionToken>,
    pub alerts: Vec<StoredAlert>,
    pub metrics: RunMetrics,
    pub environment: Environment,
}

impl EngineView {
    pub fn check_session(&self, token: &str) -> Result<&str, AuthError> {
        if !self.gateway_up {
            return Err(AuthError::Unavailable);
        }
        session_user(&self.sessions, token, self.now)
    }

    pub fn list_devices(&self, token: &str) -> Result<&[DirectoryEntry], AuthError> {
        self.check_session(token)?;
        Ok(&self.directory)
    }

    pub fn alerts_after(&self, seq: Option<u64>) -> &[StoredAlert] {
        let start = seq.map_or(0, |s| self.alerts.partition_point(|a| a.seq <= s));
        &self.alerts[start..]
    }
}

impl Engine {
    /// Builds the engine and schedules power-on, the timeline and the first
    /// tick. The run-start record is written immediately.
    pub fn new(scenario: &Scenario, log: EventLog) -> Result<Self, EngineError> {
        scenario.validate()?;
        let seed = scenario.meta.seed;
        let rules = scenario.compile_rules()?;
        let net = Network::new(NetConfig { seed, ..scenario.net.clone() })
            .map_err(|e| EngineError::Internal(e.to_string()))?;
        let gateway = Gateway::new(&scenario.gateway, seed).map_err(|e| EngineError::Internal(e.to_string()))?;
        let access = AccessControl::new(scenario.access.clone()).map_err(|e| EngineError::Internal(e.to_string()))?;
        let mut env = scenario.environment.initial.clone();
        if let Some(o) = scenario.environment.outdoor.at(SimTime::ZERO) {
            env.outdoor_temp = o;
        }
        let devices = scenario
            .devices
            .iter()
            .enumerate()
            .map(|(i, d)| DeviceRt {
                name: d.name.clone(),
                kind: d.kind,
                address: format!("node-{:02}", i + 1),
                secret: d.secret.clone(),
                portal: d.portal,
                ctx: SensorContext { zone: d.zone.clone() },
                state: d.kind.initial_state(SimTime::ZERO),
                phase: JoinPhase::Off,
                id: None,
                last_sent: None,
                last_values: BTreeMap::new(),
            })
            .collect::<Vec<_>>();
        let by_address = devices.iter().enumerate().map(|(i, d)| (d.address.clone(), i)).collect();
        let mut engine = Engine {
            name: scenario.meta.name.clone(),
            seed,
            horizon: scenario.duration(),
            sched: Scheduler::new(),
            net,
            env,
            thermal: scenario.environment.thermal,
            hazard: scenario.environment.hazard,
            outdoor: scenario.environment.outdoor.clone(),
            lawn_on_below: scenario.automation.lawn_on_below_pct,
            held: Actuators::default(),
            zones: BTreeMap::new(),
            devices,
            by_id: BTreeMap::new(),
            by_address,
            gateway,
            access,
            rules,
            active_rules: Vec::new(),
            clients: BTreeMap::new(),
            join_secret: scenario.gateway.join_secret.clone(),
            log,
            alerts: Vec::new(),
            metrics: RunMetrics::default(),
            down_since: None,
            down: Vec::new(),
            finished: false,
            readings: None,
        };
        engine.emit(RecordBody::Lifecycle(Lifecycle::RunStart {
            scenario: engine.name.clone(),
            seed,
            duration: engine.horizon,
        }))?;
        for (i, d) in scenario.devices.iter().enumerate() {
            let at = d.join_at_s.map(secs).unwrap_or(SimTime::ZERO + SimDuration::from_nanos(JOIN_STAGGER.as_nanos() * i as i64));
            engine.schedule_at(at, Target::Environment, Event::PowerOn(i))?;
        }
        for ts in &scenario.timeline {
            engine.schedule_at(secs(ts.at_s), Target::Environment, Event::Stimulus(ts.stimulus.clone()))?;
        }
        if engine.horizon >= SimTime::ZERO + TICK {
            engine.schedule_at(SimTime::ZERO + TICK, Target::Environment, Event::Tick)?;
        }
        Ok(engine)
    }

    pub fn now(&self) -> SimTime {
        self.sched.now()
    }

    pub fn horizon(&self) -> SimTime {
        self.horizon
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    pub fn environment(&self) -> &Environment {
        &self.env
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    pub fn alerts(&self) -> &[StoredAlert] {
        &self.alerts
    }

    pub fn alerts_after(&self, seq: Option<u64>) -> Vec<StoredAlert> {
        self.alerts.iter().filter(|a| seq.is_none_or(|s| a.seq > s)).cloned().collect()
    }

    pub fn metrics(&self) -> &RunMetrics {
        &self.metrics
    }

    /// Device-side state of a roster device, by display name.
    pub fn device_state(&self, name: &str) -> Option<&DeviceState> {
        self.devices.iter().find(|d| d.name == name).map(|d| &d.state)
    }

    fn schedule_at(&mut self, at: SimTime, target: Target, ev: Event) -> Result<(), EngineError> {
        self.sched.schedule_at(at, target, ev).map(|_| ()).map_err(|e| EngineError::Internal(e.to_string()))
    }

    fn emit(&mut self, body: RecordBody) -> Result<u64, EngineError> {
        let seq = self.log.next_seq();
        let rec = LogRecord { seq, t: self.now(), body };
        self.log.append(&rec)?;
        if let Some(store) = &mut self.readings {
            store.add(&rec);
        }
        Ok(seq)
    }

    /// Indexes readings as they are logged so they can be queried live.
    pub fn keep_readings(&mut self) {
        self.readings.get_or_insert_with(ReadingStore::default);
    }

    /// Reading history of one attribute; empty unless [`Engine::keep_readings`]
    /// was called before the readings were logged.
    pub fn query_readings(&self, device: &DeviceId, attribute: &str, t0: SimTime, t1: SimTime) -> ReadingSeries {
        match &self.readings {
            Some(store) => store.query_readings(device, attribute, t0, t1),
            None => ReadingSeries { device: device.clone(), attribute: attribute.to_string(), points: Vec::new() },
        }
    }

    /// Metrics so far, with uptime measured over `[0, now]`.
    pub fn live_metrics(&self) -> RunMetrics {
        let mut m = self.metrics.clone();
        if !self.finished {
            let now = self.now();
            let mut down = self.down.clone();
            if let Some(start) = self.down_since {
                down.push(Interval { start, end: now });
            }
            m.uptime_fraction = uptime_fraction(&down, now).ok();
        }
        m
    }

    pub fn view(&self) -> EngineView {
        EngineView {
            now: self.now(),
            horizon: self.horizon,
            finished: self.finished,
            gateway_up: self.gateway.is_up(),
            directory: self.gateway.entries().cloned().collect(),
            sessions: self.gateway.sessions().clone(),
            alerts: self.alerts.clone(),
            metrics: self.live_metrics(),
            environment: self.env.clone(),
        }
    }

    fn lifecycle(&mut self, l: Lifecycle) -> Result<u64, EngineError> {
        self.emit(RecordBody::Lifecycle(l))
    }

    /// Stores an alert and appends it to the log.
    pub fn record_alert(&mut self, alert: Alert) -> Result<(), EngineError> {
        let seq = self.emit(RecordBody::Alert(alert.clone()))?;
        *self.metrics.alert_count_by_category.entry(alert.category).or_insert(0) += 1;
        self.alerts.push(StoredAlert { seq, alert });
        Ok(())
    }

    /// Processes every event due at or before `t`, then moves the clock to
    /// `t` (capped at the horizon).
    pub fn advance_to(&mut self, t: SimTime) -> Result<(), EngineError> {
        let t = t.min(self.horizon);
        while self.sched.peek_time().is_some_and(|next| next <= t) {
            let ev = self.sched.pop_next().expect("peeked");
            self.handle(ev.payload)?;
        }
        self.sched.advance_idle_to(t);
        Ok(())
    }

    /// Runs to the horizon and writes the end-of-run record. Idempotent.
    pub fn finish(&mut self) -> Result<FinalState, EngineError> {
        if !self.finished {
            self.advance_to(self.horizon)?;
            self.lifecycle(Lifecycle::RunEnd { horizon: self.horizon })?;
            if let Some(start) = self.down_since.take() {
                self.down.push(Interval { start, end: self.horizon });
            }
            self.metrics.uptime_fraction = uptime_fraction(&self.down, self.horizon).ok();
            self.finished = true;
            self.log.flush()?;
        }
        Ok(self.final_state())
    }

    /// Stops early (server shutdown): writes the end record at the current
    /// time and flushes the log.
    pub fn stop(&mut self) -> Result<FinalState, EngineError> {
        if !self.finished {
            self.horizon = self.now();
            self.lifecycle(Lifecycle::RunEnd { horizon: self.horizon })?;
            if let Some(start) = self.down_since.take() {
                self.down.push(Interval { start, end: self.horizon });
            }
            self.metrics.uptime_fraction = uptime_fraction(&self.down, self.horizon).ok();
            self.finished = true;
            self.log.flush()?;
        }
        Ok(self.final_state())
    }

    pub fn report(&self, targets: &MetricsTargets) -> Report {
        run_report(&self.metrics, targets)
    }

    /// The live world: the gateway's directory, device-side actuator states,
    /// the audit trail and the metrics gathered so far.
    pub fn final_state(&self) -> FinalState {
        // Registration is the gateway's; a device whose ack was lost still counts.
        let actuators = self
            .gateway
            .directory()
            .iter()
            .filter(|(_, e)| !e.registration.descriptor.kind.is_sensor())
            .filter_map(|(id, e)| {
                let i = self.by_address.get(&e.registration.descriptor.logical_address)?;
                Some((id.clone(), self.devices[*i].state.clone()))
            })
            .collect();
        FinalState {
            horizon: self.finished.then_some(self.horizon),
            gateway_up: self.gateway.is_up(),
            directory: self.gateway.directory().clone(),
            actuators,
            audit: self.access.audit_log().to_vec(),
            metrics: self.metrics.clone(),
        }
    }

    fn handle(&mut self, ev: Event) -> Result<(), EngineError> {
        match ev {
            Event::Deliver(m) => self.on_deliver(m),
            Event::Tick => self.on_tick(),
            Event::PowerOn(i) => self.send_join(i, 1),
            Event::JoinTimeout { device, attempt } => {
                if self.devices[device].phase == JoinPhase::Joining(attempt) {
                    self.send_join(device, attempt + 1)
                } else {
                    Ok(())
                }
            }
            Event::Stimulus(s) => self.apply_stimulus(s),
            Event::MotionEnd(zone) => {
                if let Some(n) = self.zones.get_mut(&zone) {
                    *n -= 1;
                    if *n == 0 {
                        self.zones.remove(&zone);
                        self.env.motion_zones.remove(&zone);
                    }
                }
                Ok(())
            }
            Event::AutoClose(timer) => self.on_auto_close(timer),
        }
    }

    /// Sends a message, scheduling its delivery or logging its loss.
    fn transmit(&mut self, src: String, dst: String, wire: Wire) -> Result<(u64, Option<SimTime>), EngineError> {
        let kind = wire.kind();
        let draft = MessageDraft { src, dst, kind, payload: wire };
        let outcome = self.net.send(draft, self.now()).map_err(|e| EngineError::Internal(e.to_string()))?;
        match outcome {
            SendOutcome::Delivered(m) => {
                let (id, at) = (m.id, m.deliver_time);
                let target = if m.dst == GATEWAY_ADDRESS {
                    Target::Gateway
                } else {
                    Target::Device(DeviceId::new(m.dst.clone()).map_err(|e| EngineError::Internal(e.to_string()))?)
                };
                self.schedule_at(at, target, Event::Deliver(m))?;
                Ok((id, Some(at)))
            }
            SendOutcome::Dropped { id, draft, .. } => {
                self.metrics.dropped_count += 1;
                self.lifecycle(Lifecycle::MessageDropped { id, src: draft.src, dst: draft.dst, kind })?;
                Ok((id, None))
            }
        }
    }

    fn send_join(&mut self, i: usize, attempt: u32) -> Result<(), EngineError> {
        let now = self.now();
        if attempt == 1 && self.devices[i].kind.is_sensor() {
            self.sample(i, now);
        }
        let d = &mut self.devices[i];
        d.phase = JoinPhase::Joining(attempt);
        let req = JoinRequest {
            display_name: d.name.clone(),
            kind: d.kind,
            secret: d.secret.clone().unwrap_or_else(|| self.gateway_secret()),
            state: self.devices[i].state.clone(),
        };
        let address = self.devices[i].address.clone();
        self.transmit(address, GATEWAY_ADDRESS.into(), Wire::Join(req))?;
        self.schedule_at(now + JOIN_RETRY, Target::Environment, Event::JoinTimeout { device: i, attempt })
    }

    fn gateway_secret(&self) -> String {
        self.join_secret.clone()
    }

    /// Takes a sensor sample into device-side state. Returns whether any
    /// value differs from the previously published one.
    fn sample(&mut self, i: usize, now: SimTime) -> bool {
        let d = &mut self.devices[i];
        let Ok(values) = read_sensor(d.kind, &d.ctx, &self.env, &self.hazard, &d.state, now) else { return false };
        let changed = values.iter().any(|(k, v)| d.state.get(k) != Some(v));
        if changed {
            for (k, v) in &values {
                d.state.attributes.insert(k.clone(), v.clone());
            }
            d.state.last_update = now;
        }
        values != d.last_values
    }

    fn on_tick(&mut self) -> Result<(), EngineError> {
        let now = self.now();
        if let Some(o) = self.outdoor.at(SimTime::from_nanos(now.as_nanos() - TICK.as_nanos() as u64)) {
            self.env.outdoor_temp = o;
        }
        let was_burning = self.env.fire_active;
        self.env = step_environment(&self.env, self.held, &self.thermal, &self.hazard, TICK)
            .map_err(|e| EngineError::Internal(e.to_string()))?;
        if was_burning && !self.env.fire_active {
            self.lifecycle(Lifecycle::FireExtinguished)?;
        }
        self.held = self.actuators();

        for i in 0..self.devices.len() {
            let d = &self.devices[i];
            if d.phase != JoinPhase::Registered || !d.kind.is_sensor() {
                continue;
            }
            let differs = self.sample(i, now);
            let d = &self.devices[i];
            let due = d.last_sent.is_none_or(|t| now >= t + HEARTBEAT);
            if differs || due {
                self.publish(i)?;
            }
        }
        self.evaluate()?;
        if now + TICK <= self.horizon {
            self.schedule_at(now + TICK, Target::Environment, Event::Tick)?;
        }
        Ok(())
    }

    fn publish(&mut self, i: usize) -> Result<(), EngineError> {
        let now = self.now();
        let d = &mut self.devices[i];
        let Some(id) = d.id.clone() else { return Ok(()) };
        let values = d.state.attributes.clone();
        d.last_sent = Some(now);
        d.last_values = values.clone();
        let address = d.address.clone();
        self.transmit(address, GATEWAY_ADDRESS.into(), Wire::Reading { device: id, sampled_at: now, values })?;
        Ok(())
    }

    fn actuators(&self) -> Actuators {
        let mut a = Actuators::default();
        for d in &self.devices {
            let on = d.state.bool("on");
            match d.kind {
                DeviceKind::AirConditioner => a.ac_on |= on,
                DeviceKind::Furnace => a.furnace_on |= on,
                DeviceKind::FireSprinkler => a.fire_sprinkler_on |= on,
                DeviceKind::LawnSprinkler => a.lawn_sprinkler_on |= on,
                _ => {}
            }
        }
        a
    }

    fn apply_stimulus(&mut self, s: Stimulus) -> Result<(), EngineError> {
        let detail = serde_json::to_value(&s).map_err(|e| EngineError::Internal(e.to_string()))?;
        self.lifecycle(Lifecycle::Stimulus { name: s.name().to_string(), detail })?;
        let now = self.now();
        match s {
            Stimulus::FireStart {} => self.env.fire_active = true,
            Stimulus::FireStop {} => {
                self.env.fire_active = false;
                self.env.suppression_s = 0.0;
            }
            Stimulus::Motion { zone, duration_s } => {
                *self.zones.entry(zone.clone()).or_insert(0) += 1;
                self.env.motion_zones.insert(zone.clone());
                let end = now + SimDuration::from_nanos((duration_s * 1e9).round() as i64);
                self.schedule_at(end, Target::Environment, Event::MotionEnd(zone))?;
            }
            Stimulus::Rain { level_delta } => {
                self.env.water_level_pct = (self.env.water_level_pct + level_delta).clamp(0.0, 100.0);
            }
            Stimulus::Swipe { reader, card } => {
                if let Some(i) = self.devices.iter().position(|d| d.name == reader) {
                    self.device_swipe(i, card)?;
                }
            }
            Stimulus::GatewayDown {} => self.set_gateway(false)?,
            Stimulus::GatewayUp {} => self.set_gateway(true)?,
            Stimulus::Login { username, password } => {
                if let Ok(session) = self.login(&username, &password)? {
                    self.clients.insert(username, session.token);
                }
            }
            Stimulus::ClientCommand { username, device, attribute, value } => {
                let token = self.clients.get(&username).cloned().unwrap_or_default();
                let result = match self.gateway.id_by_name(&device).cloned() {
                    Some(id) => self.dispatch_command(&token, &id, &attribute, value)?,
                    None => {
                        self.lifecycle(Lifecycle::ClientRejected {
                            username,
                            error: CommandError::NotRegistered.to_string(),
                        })?;
                        Err(CommandError::NotRegistered)
                    }
                };
                let _ = result;
            }
        }
        Ok(())
    }

    /// Injects a stimulus at the current time (server mode).
    pub fn inject(&mut self, s: Stimulus) -> Result<(), EngineError> {
        self.apply_stimulus(s)
    }

    fn set_gateway(&mut self, up: bool) -> Result<(), EngineError> {
        if self.gateway.is_up() == up {
            return Ok(());
        }
        let now = self.now();
        self.gateway.set_up(up);
        if !up {
            self.down_since = Some(now);
            self.lifecycle(Lifecycle::GatewayDown)?;
            return Ok(());
        }
        self.lifecycle(Lifecycle::GatewayUp)?;
        let since = self.down_since.take().unwrap_or(now);
        self.down.push(Interval { start: since, end: now });
        self.record_alert(Alert {
            time: now,
            severity: Severity::Warning,
            category: AlertCategory::System,
            source: GATEWAY_SOURCE.to_string(),
            message: format!("gateway back after {} outage", now - since),
        })?;
        for portal in Portal::ALL {
            if let Some(timer) = self.access.current_timer(portal).copied() {
                if timer.deadline <= now {
                    self.on_auto_close(timer)?;
                }
            }
        }
        self.evaluate()
    }

    fn device_swipe(&mut self, i: usize, card: RfidCard) -> Result<(u64, bool), EngineError> {
        let now = self.now();
        let d = &mut self.devices[i];
        d.state.attributes.insert("last_card".into(), AttributeValue::Text(card.number().to_string()));
        d.state.last_update = now;
        let Some(id) = d.id.clone() else { return Ok((self.net.next_id(), false)) };
        let address = d.address.clone();
        let (msg, at) = self.transmit(address, GATEWAY_ADDRESS.into(), Wire::Swipe { device: id, card })?;
        Ok((msg, at.is_some()))
    }

    /// A client login; failures are logged and bursts raise an alert.
    pub fn login(&mut self, username: &str, password: &str) -> Result<Result<SessionToken, AuthError>, EngineError> {
        let now = self.now();
        if !self.gateway.is_up() {
            self.lifecycle(Lifecycle::ClientRejected {
                username: username.to_string(),
                error: AuthError::Unavailable.to_string(),
            })?;
            return Ok(Err(AuthError::Unavailable));
        }
        match self.gateway.authenticate_client(username, password, now) {
            Ok(session) => {
                self.lifecycle(Lifecycle::LoginSucceeded { username: username.to_string() })?;
                Ok(Ok(session))
            }
            Err(f) => {
                let lockout = f.alert.is_some();
                self.lifecycle(Lifecycle::LoginFailed {
                    username: f.username.clone(),
                    consecutive: f.consecutive,
                    lockout,
                })?;
                if let Some(alert) = f.alert {
                    self.metrics.attacks_observed += 1;
                    self.record_alert(alert)?;
                    self.metrics.attacks_alerted += 1;
                }
                Ok(Err(f.error))
            }
        }
    }

    pub fn list_devices(&self, token: &str) -> Result<Vec<(DeviceDescriptor, DeviceState)>, AuthError> {
        if !self.gateway.is_up() {
            return Err(AuthError::Unavailable);
        }
        self.gateway.list_devices(token, self.now())
    }

    /// Validates and routes a client write. The acknowledgement reports
    /// whether the transport delivered the command.
    pub fn dispatch_command(
        &mut self,
        token: &str,
        device: &DeviceId,
        attribute: &str,
        value: AttributeValue,
    ) -> Result<Result<CommandAck, CommandError>, EngineError> {
        let now = self.now();
        let checked = if !self.gateway.is_up() {
            Err(CommandError::Auth(AuthError::Unavailable))
        } else {
            match self.gateway.check_session(token, now) {
                Err(e) => Err(CommandError::Auth(e)),
                Ok(user) => {
                    let user = user.to_string();
                    self.gateway
                        .validate_command(device, attribute, &value)
                        .map(|e| (user, e.registration.descriptor.kind))
                }
            }
        };
        let (username, kind) = match checked {
            Ok(ok) => ok,
            Err(e) => {
                let username = match &e {
                    CommandError::Auth(_) => String::new(),
                    _ => self.gateway.check_session(token, now).unwrap_or_default().to_string(),
                };
                self.lifecycle(Lifecycle::ClientRejected { username, error: e.to_string() })?;
                return Ok(Err(e));
            }
        };
        let (message, at) =
            self.issue_command(device.clone(), attribute.to_string(), value.clone(), CommandOrigin::Client { username })?;
        if let Some(portal) = Portal::for_kind(kind) {
            if attribute == "open" && value == AttributeValue::Bool(true) {
                self.arm_auto_close(portal)?;
            }
        }
        Ok(Ok(CommandAck { message, delivered: at.is_some(), deliver_at: at }))
    }

    /// A swipe at the reader guarding `portal`, injected by an authenticated
    /// client (the dashboard's virtual card).
    pub fn client_swipe(
        &mut self,
        token: &str,
        portal: Portal,
        card: &str,
    ) -> Result<Result<SwipeAck, SwipeError>, EngineError> {
        if !self.gateway.is_up() {
            return Ok(Err(SwipeError::Auth(AuthError::Unavailable)));
        }
        if let Err(e) = self.gateway.check_session(token, self.now()) {
            return Ok(Err(SwipeError::Auth(e)));
        }
        let card = match RfidCard::new(card) {
            Ok(c) => c,
            Err(e) => return Ok(Err(SwipeError::Card(e.to_string()))),
        };
        let Some(reader) = self.access.reader_for(portal).cloned() else { return Ok(Err(SwipeError::NoReader(portal))) };
        let i = self.by_id[&reader];
        let decision = validate_card(&card, portal, self.access.policy());
        let (message, delivered) = self.device_swipe(i, card)?;
        Ok(Ok(SwipeAck { reader, portal, decision, message, delivered }))
    }

    fn issue_command(
        &mut self,
        device: DeviceId,
        attribute: String,
        value: AttributeValue,
        origin: CommandOrigin,
    ) -> Result<(u64, Option<SimTime>), EngineError> {
        let now = self.now();
        let message = self.net.next_id();
        self.emit(RecordBody::Command(CommandRecord {
            phase: CommandPhase::Issued,
            device: device.clone(),
            attribute: attribute.clone(),
            value: value.clone(),
            origin: origin.clone(),
            message,
        }))?;
        self.gateway.mark_pending(&device, &attribute, &value, now);
        let Some(entry) = self.gateway.entry(&device) else {
            return Err(EngineError::Internal(format!("command to unregistered {device}")));
        };
        let dst = entry.registration.descriptor.logical_address.clone();
        self.transmit(GATEWAY_ADDRESS.into(), dst, Wire::Command { device, attribute, value, origin })
    }

    fn arm_auto_close(&mut self, portal: Portal) -> Result<(), EngineError> {
        let timer = self.access.arm_timer(portal, self.now());
        self.lifecycle(Lifecycle::AutoCloseScheduled { portal, deadline: timer.deadline })?;
        self.schedule_at(timer.deadline, Target::Gateway, Event::AutoClose(timer))
    }

    fn on_auto_close(&mut self, timer: CloseTimer) -> Result<(), EngineError> {
        if !self.gateway.is_up() {
            return Ok(());
        }
        let now = self.now();
        let Some(door) = self.access.door(timer.portal).cloned() else { return Ok(()) };
        let open = AttributeValue::Bool(true);
        let portal_open = self.gateway.expected(&door, "open", now) == Some(&open);
        if !auto_close_check(portal_open, &timer, self.access.current_timer(timer.portal)) {
            return Ok(());
        }
        let close = AttributeValue::Bool(false);
        if self.gateway.needs_command(&door, "open", &close, now) {
            self.issue_command(door, "open".into(), close, CommandOrigin::AutoClose { portal: timer.portal })?;
        }
        // Re-check once the close has had time to be acknowledged.
        self.schedule_at(now + PENDING_TIMEOUT, Target::Gateway, Event::AutoClose(timer))
    }

    fn on_deliver(&mut self, m: crate::simnet::Message<Wire>) -> Result<(), EngineError> {
        self.emit(RecordBody::Message(MessageRecord {
            id: m.id,
            src: m.src.clone(),
            dst: m.dst.clone(),
            kind: m.kind,
            sent_at: m.send_time,
            deliver_at: m.deliver_time,
        }))?;
        self.metrics.delivered_count += 1;
        self.metrics.latency_samples.push(m.latency());
        if m.dst == GATEWAY_ADDRESS {
            if !self.gateway.is_up() {
                self.lifecycle(Lifecycle::Discarded { id: m.id, kind: m.kind })?;
                return Ok(());
            }
            self.gateway_receive(m.src, m.payload)
        } else {
            let Some(&i) = self.by_address.get(&m.dst) else {
                return Err(EngineError::Internal(format!("no device at {}", m.dst)));
            };
            self.device_receive(i, m.id, m.payload)
        }
    }

    fn gateway_receive(&mut self, src: String, wire: Wire) -> Result<(), EngineError> {
        let now = self.now();
        match wire {
            Wire::Join(req) => match self.gateway.handle_join(&req, &src, now) {
                JoinOutcome::Registered(reg) => {
                    let d = reg.descriptor;
                    if self.metrics.start_time.is_none() {
                        self.metrics.start_time = Some(now - SimTime::ZERO);
                    }
                    self.lifecycle(Lifecycle::DeviceRegistered { descriptor: d.clone(), state: req.state })?;
                    if let Some(&i) = self.by_address.get(&src) {
                        if let Some(portal) = self.devices[i].portal {
                            self.access.add_reader(d.id.clone(), portal);
                        }
                    }
                    self.access.add_door(d.id.clone(), d.kind);
                    self.refresh_active_rules();
                    self.transmit(GATEWAY_ADDRESS.into(), src, Wire::JoinAck(Some(d.id)))?;
                    self.evaluate()
                }
                JoinOutcome::AlreadyRegistered(id) => {
                    self.transmit(GATEWAY_ADDRESS.into(), src, Wire::JoinAck(Some(id)))?;
                    Ok(())
                }
                JoinOutcome::Rejected { reason, alert } => {
                    self.lifecycle(Lifecycle::JoinRejected {
                        display_name: req.display_name.clone(),
                        kind: req.kind,
                        reason,
                    })?;
                    if reason == JoinRejectReason::BadSecret {
                        self.metrics.attacks_observed += 1;
                    }
                    if let Some(alert) = alert {
                        self.record_alert(alert)?;
                        self.metrics.attacks_alerted += 1;
                    }
                    self.transmit(GATEWAY_ADDRESS.into(), src, Wire::JoinAck(None))?;
                    Ok(())
                }
            },
            Wire::Reading { device, sampled_at, values } => {
                if self.gateway.entry(&device).is_none() {
                    return Ok(());
                }
                self.emit(RecordBody::Reading(ReadingRecord {
                    device: device.clone(),
                    sampled_at,
                    values: values.clone(),
                }))?;
                self.reading_alerts(&device, &values)?;
                self.gateway.apply_reading(&device, &values, sampled_at);
                self.evaluate()
            }
            Wire::Swipe { device, card } => {
                let Some(entry) = self.gateway.entry(&device) else { return Ok(()) };
                let kind = entry.registration.descriptor.kind;
                let values =
                    BTreeMap::from([("last_card".to_string(), AttributeValue::Text(card.number().to_string()))]);
                let sent_at = now;
                self.emit(RecordBody::Reading(ReadingRecord { device: device.clone(), sampled_at: sent_at, values: values.clone() }))?;
                self.gateway.apply_reading(&device, &values, sent_at);
                let fx = match self.access.on_swipe(&device, kind, &card, now) {
                    Ok(fx) => fx,
                    Err(AccessError::UnmappedReader(_)) | Err(AccessError::NotAReader(_)) => return Ok(()),
                    Err(e) => return Err(EngineError::Internal(e.to_string())),
                };
                self.lifecycle(Lifecycle::Audit(fx.audit.clone()))?;
                if fx.audit.decision == AccessDecision::Deny {
                    self.metrics.attacks_observed += 1;
                }
                if let Some(alert) = fx.alert {
                    self.record_alert(alert)?;
                    self.metrics.attacks_alerted += 1;
                }
                if let Some(timer) = fx.timer {
                    let portal = fx.audit.portal;
                    if let Some(door) = fx.open {
                        let open = AttributeValue::Bool(true);
                        if self.gateway.needs_command(&door, "open", &open, now) {
                            self.issue_command(door, "open".into(), open, CommandOrigin::Access { portal })?;
                        }
                    }
                    self.lifecycle(Lifecycle::AutoCloseScheduled { portal, deadline: timer.deadline })?;
                    self.schedule_at(timer.deadline, Target::Gateway, Event::AutoClose(timer))?;
                }
                Ok(())
            }
            Wire::Ack { device, attribute, value, origin, command } => {
                self.emit(RecordBody::Command(CommandRecord {
                    phase: CommandPhase::Acked,
                    device: device.clone(),
                    attribute: attribute.clone(),
                    value: value.clone(),
                    origin,
                    message: command,
                }))?;
                self.gateway.apply_ack(&device, &attribute, &value, now);
                self.evaluate()
            }
            Wire::JoinAck(_) | Wire::Command { .. } => Err(EngineError::Internal("device message sent to gateway".into())),
        }
    }

    /// Safety alerts raised when a reading flips a hazard attribute.
    fn reading_alerts(&mut self, device: &DeviceId, values: &BTreeMap<String, AttributeValue>) -> Result<(), EngineError> {
        let now = self.now();
        let Some(entry) = self.gateway.entry(device) else { return Ok(()) };
        let kind = entry.registration.descriptor.kind;
        let before = entry.state.clone();
        let rose = |attr: &str| values.get(attr) == Some(&AttributeValue::Bool(true)) && !before.bool(attr);
        let mut raised = Vec::new();
        match kind {
            DeviceKind::FireMonitor if rose("fire") => raised.push((Severity::Critical, AlertCategory::Fire, "fire detected")),
            DeviceKind::SmokeDetector if rose("smoke") => {
                raised.push((Severity::Warning, AlertCategory::Fire, "smoke above threshold"))
            }
            DeviceKind::WaterLevelMonitor => {
                let level = |s: Option<&AttributeValue>| s.and_then(AttributeValue::as_f64);
                if let (Some(new), Some(old)) = (level(values.get("level")), level(before.get("level"))) {
                    if new < self.lawn_on_below && old >= self.lawn_on_below {
                        raised.push((Severity::Warning, AlertCategory::Water, "lawn water level low"));
                    }
                }
            }
            _ => {}
        }
        for (severity, category, message) in raised {
            self.record_alert(Alert { time: now, severity, category, source: device.to_string(), message: message.into() })?;
        }
        Ok(())
    }

    fn device_receive(&mut self, i: usize, message: u64, wire: Wire) -> Result<(), EngineError> {
        let now = self.now();
        match wire {
            Wire::JoinAck(Some(id)) => {
                let d = &mut self.devices[i];
                if d.phase == JoinPhase::Registered {
                    return Ok(());
                }
                d.phase = JoinPhase::Registered;
                d.id = Some(id.clone());
                d.last_sent = Some(now);
                d.last_values = d.state.attributes.clone();
                self.by_id.insert(id, i);
                Ok(())
            }
            Wire::JoinAck(None) => {
                if matches!(self.devices[i].phase, JoinPhase::Joining(_)) {
                    self.devices[i].phase = JoinPhase::Rejected;
                }
                Ok(())
            }
            Wire::Command { device, attribute, value, origin } => {
                let d = &mut self.devices[i];
                let applied = apply_command(&d.state, d.kind, &attribute, &value, now)
                    .map_err(|e| EngineError::Internal(format!("gateway routed an invalid command: {e}")))?;
                d.state = applied.state;
                let phase = if applied.changed { CommandPhase::Applied } else { CommandPhase::Noop };
                let current = d.state.get(&attribute).cloned().unwrap_or(value);
                let address = d.address.clone();
                self.emit(RecordBody::Command(CommandRecord {
                    phase,
                    device: device.clone(),
                    attribute: attribute.clone(),
                    value: current.clone(),
                    origin: origin.clone(),
                    message,
                }))?;
                self.transmit(
                    address,
                    GATEWAY_ADDRESS.into(),
                    Wire::Ack { device, attribute, value: current, origin, command: message },
                )?;
                Ok(())
            }
            other => Err(EngineError::Internal(format!("gateway message {:?} sent to a device", other.kind()))),
        }
    }

    fn refresh_active_rules(&mut self) {
        let registered: BTreeSet<String> = self.gateway.entries().map(|e| e.registration.descriptor.handle()).collect();
        self.active_rules = self
            .rules
            .iter()
            .filter(|r| {
                r.condition.refs().iter().all(|a| registered.contains(&a.device))
                    && r.actions.iter().all(|a| registered.contains(&a.target.device))
            })
            .cloned()
            .collect();
    }

    /// One level-triggered rule pass over the gateway's view. Commands the
    /// directory already reflects, or that are awaiting their ack, are not
    /// re-sent.
    fn evaluate(&mut self) -> Result<(), EngineError> {
        if !self.gateway.is_up() || self.active_rules.is_empty() {
            return Ok(());
        }
        let now = self.now();
        let snapshot = self.gateway.snapshot(now);
        let eval = evaluate_all(&self.active_rules, &snapshot);
        for (rule, error) in eval.errors {
            self.lifecycle(Lifecycle::RuleError { rule, error: error.to_string() })?;
        }
        for cmd in eval.commands {
            if !self.gateway.needs_command(&cmd.device, &cmd.attribute, &cmd.value, now) {
                continue;
            }
            for s in eval.shadowed.iter().filter(|s| s.shadowed.device == cmd.device && s.shadowed.attribute == cmd.attribute) {
                self.lifecycle(Lifecycle::Shadowed {
                    rule: s.shadowed.rule.clone(),
                    device: s.shadowed.device.clone(),
                    attribute: s.shadowed.attribute.clone(),
                    value: s.shadowed.value.clone(),
                    by_rule: s.by_rule.clone(),
                })?;
            }
            self.issue_command(cmd.device, cmd.attribute, cmd.value, CommandOrigin::Rule { rule: cmd.rule })?;
        }
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn audit(&self) -> &[AuditEntry] {
        self.access.audit_log()
    }
}
