//! Lumped physical environment and device behaviour.
//!
//! The environment is a single room with one indoor temperature coupled to a
//! scripted outdoor temperature, a fire/smoke state, one lawn water level and
//! a set of active motion zones. It is advanced with forward Euler steps.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Access, AttributeValue, DeviceKind, DeviceState, SimDuration, SimTime, Unit, ValueType};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DevicesError {
    #[error("time step must be positive, got {0}")]
    NonPositiveStep(SimDuration),
    #[error("{0} is not a sensor")]
    NotASensor(DeviceKind),
    #[error("{kind} has no attribute `{attribute}`")]
    UnknownAttribute { kind: DeviceKind, attribute: String },
    #[error("{kind}.{attribute} is read-only")]
    ReadOnly { kind: DeviceKind, attribute: String },
    #[error("{kind}.{attribute} expects {expected}, got {found}")]
    Type { kind: DeviceKind, attribute: String, expected: ValueType, found: ValueType },
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Environment {
    pub indoor_temp: f64,
    pub outdoor_temp: f64,
    #[serde(default)]
    pub fire_active: bool,
    #[serde(default)]
    pub smoke_ppm: f64,
    pub water_level_pct: f64,
    #[serde(default)]
    pub motion_zones: BTreeSet<String>,
    /// Continuous fire-sprinkler operation while the fire burns, seconds.
    #[serde(default)]
    pub suppression_s: f64,
}

impl Default for Environment {
    fn default() -> Self {
        Environment {
            indoor_temp: 22.0,
            outdoor_temp: 22.0,
            fire_active: false,
            smoke_ppm: 0.0,
            water_level_pct: 50.0,
            motion_zones: BTreeSet::new(),
            suppression_s: 0.0,
        }
    }
}

impl Environment {
    pub fn validate(&self) -> Result<(), DevicesError> {
        if !self.indoor_temp.is_finite() || !self.outdoor_temp.is_finite() {
            return Err(DevicesError::Config("temperatures must be finite".into()));
        }
        if self.smoke_ppm.is_nan() || self.smoke_ppm < 0.0 {
            return Err(DevicesError::Config("smoke_ppm must be >= 0".into()));
        }
        if !(0.0..=100.0).contains(&self.water_level_pct) {
            return Err(DevicesError::Config("water_level_pct must be within [0, 100]".into()));
        }
        Ok(())
    }
}

/// Rates are per minute.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThermalParams {
    pub k_leak: f64,
    pub q_ac: f64,
    pub q_furnace: f64,
    pub q_fire: f64,
}

impl Default for ThermalParams {
    fn default() -> Self {
        ThermalParams { k_leak: 0.05, q_ac: -0.8, q_furnace: 0.8, q_fire: 2.0 }
    }
}

impl ThermalParams {
    pub fn validate(&self) -> Result<(), DevicesError> {
        if self.k_leak.is_nan() || self.k_leak <= 0.0 {
            return Err(DevicesError::Config("k_leak must be positive".into()));
        }
        if !(self.q_ac < 0.0 && 0.0 < self.q_furnace) {
            return Err(DevicesError::Config("need q_ac < 0 < q_furnace".into()));
        }
        if self.q_fire.is_nan() || self.q_fire < 0.0 {
            return Err(DevicesError::Config("q_fire must be >= 0".into()));
        }
        Ok(())
    }
}

/// Fire, smoke and water constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HazardParams {
    pub smoke_rise_ppm_per_min: f64,
    pub smoke_decay_per_min: f64,
    pub smoke_threshold_ppm: f64,
    pub evaporation_pct_per_min: f64,
    pub lawn_fill_pct_per_min: f64,
    pub extinguish_after_s: f64,
}

impl Default for HazardParams {
    fn default() -> Self {
        HazardParams {
            smoke_rise_ppm_per_min: 100.0,
            smoke_decay_per_min: 0.10,
            smoke_threshold_ppm: 200.0,
            evaporation_pct_per_min: 0.5,
            lawn_fill_pct_per_min: 5.0,
            extinguish_after_s: 120.0,
        }
    }
}

/// Actuator outputs that feed back into the environment.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Actuators {
    pub ac_on: bool,
    pub furnace_on: bool,
    pub fire_sprinkler_on: bool,
    pub lawn_sprinkler_on: bool,
}

/// One forward Euler step of length `dt` with actuator outputs held fixed.
pub fn step_environment(
    env: &Environment,
    act: Actuators,
    thermal: &ThermalParams,
    hazard: &HazardParams,
    dt: SimDuration,
) -> Result<Environment, DevicesError> {
    if dt <= SimDuration::ZERO {
        return Err(DevicesError::NonPositiveStep(dt));
    }
    let minutes = dt.as_mins_f64();
    let flag = |b: bool| if b { 1.0 } else { 0.0 };
    let mut next = env.clone();

    let dtemp = thermal.k_leak * (env.outdoor_temp - env.indoor_temp)
        + thermal.q_ac * flag(act.ac_on)
        + thermal.q_furnace * flag(act.furnace_on)
        + thermal.q_fire * flag(env.fire_active);
    next.indoor_temp = env.indoor_temp + minutes * dtemp;

    next.smoke_ppm = if env.fire_active {
        env.smoke_ppm + minutes * hazard.smoke_rise_ppm_per_min
    } else {
        env.smoke_ppm * (1.0 - minutes * hazard.smoke_decay_per_min)
    }
    .max(0.0);

    let dwater = -hazard.evaporation_pct_per_min + hazard.lawn_fill_pct_per_min * flag(act.lawn_sprinkler_on);
    next.water_level_pct = (env.water_level_pct + minutes * dwater).clamp(0.0, 100.0);

    if env.fire_active && act.fire_sprinkler_on {
        next.suppression_s = env.suppression_s + dt.as_secs_f64();
        if next.suppression_s >= hazard.extinguish_after_s {
            next.fire_active = false;
            next.suppression_s = 0.0;
        }
    } else {
        next.suppression_s = 0.0;
    }
    Ok(next)
}

/// Piecewise-linear outdoor temperature, held constant outside its points.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OutdoorSchedule {
    /// `(seconds, °C)` pairs in increasing time order.
    pub points: Vec<(f64, f64)>,
}

impl OutdoorSchedule {
    pub fn validate(&self) -> Result<(), DevicesError> {
        let ordered = self.points.windows(2).all(|w| w[0].0 < w[1].0);
        let finite = self.points.iter().all(|(t, v)| t.is_finite() && v.is_finite() && *t >= 0.0);
        if ordered && finite {
            Ok(())
        } else {
            Err(DevicesError::Config("outdoor schedule must be finite and strictly increasing in time".into()))
        }
    }

    pub fn at(&self, t: SimTime) -> Option<f64> {
        let s = t.as_secs_f64();
        let first = self.points.first()?;
        if s <= first.0 {
            return Some(first.1);
        }
        for w in self.points.windows(2) {
            let ((t0, v0), (t1, v1)) = (w[0], w[1]);
            if s <= t1 {
                return Some(v0 + (v1 - v0) * (s - t0) / (t1 - t0));
            }
        }
        self.points.last().map(|p| p.1)
    }
}

/// Per-device inputs a sensor needs beyond the environment.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SensorContext {
    /// Motion zone watched by a motion detector.
    pub zone: Option<String>,
}

/// Projects the environment onto a sensor's attributes. Pure: `previous` is
/// only consulted for attributes that persist between samples
/// (`last_motion_at`, `last_card`).
pub fn read_sensor(
    kind: DeviceKind,
    ctx: &SensorContext,
    env: &Environment,
    hazard: &HazardParams,
    previous: &DeviceState,
    now: SimTime,
) -> Result<BTreeMap<String, AttributeValue>, DevicesError> {
    let mut out = BTreeMap::new();
    let mut put = |k: &str, v: AttributeValue| {
        out.insert(k.to_string(), v);
    };
    match kind {
        DeviceKind::Thermostat => put("temperature", AttributeValue::celsius(env.indoor_temp)),
        DeviceKind::FireMonitor => put("fire", AttributeValue::Bool(env.fire_active)),
        DeviceKind::SmokeDetector => {
            put("smoke", AttributeValue::Bool(env.smoke_ppm >= hazard.smoke_threshold_ppm));
            put("level", AttributeValue::number(env.smoke_ppm, Unit::Ppm));
        }
        DeviceKind::WaterLevelMonitor => {
            put("level", AttributeValue::number(env.water_level_pct, Unit::Percent));
        }
        DeviceKind::MotionDetector => {
            let active = ctx.zone.as_ref().is_some_and(|z| env.motion_zones.contains(z));
            put("motion", AttributeValue::Bool(active));
            let last = if active {
                AttributeValue::number(now.as_secs_f64(), Unit::None)
            } else {
                previous.get("last_motion_at").cloned().unwrap_or(AttributeValue::number(0.0, Unit::None))
            };
            put("last_motion_at", last);
        }
        DeviceKind::RfidReader => {
            let card = previous.get("last_card").cloned().unwrap_or(AttributeValue::Text(String::new()));
            put("last_card", card);
        }
        other => return Err(DevicesError::NotASensor(other)),
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThermostatConfig {
    pub ac_on_above: f64,
    pub furnace_on_below: f64,
    pub hysteresis: f64,
}

impl Default for ThermostatConfig {
    fn default() -> Self {
        ThermostatConfig { ac_on_above: 28.0, furnace_on_below: 18.0, hysteresis: 1.0 }
    }
}

impl ThermostatConfig {
    pub fn validate(&self) -> Result<(), DevicesError> {
        if self.hysteresis >= 0.0
            && self.ac_on_above - self.hysteresis > self.furnace_on_below + self.hysteresis
        {
            Ok(())
        } else {
            Err(DevicesError::Config("thermostat bands overlap".into()))
        }
    }

    pub fn ac_off_at_or_below(&self) -> f64 {
        self.ac_on_above - self.hysteresis
    }

    pub fn furnace_off_at_or_above(&self) -> f64 {
        self.furnace_on_below + self.hysteresis
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct HvacState {
    pub ac_on: bool,
    pub furnace_on: bool,
}

/// Bang-bang controller with a dead band: AC on above `ac_on_above`, off at or
/// below `ac_on_above - hysteresis`; furnace on below `furnace_on_below`, off
/// at or above `furnace_on_below + hysteresis`.
pub fn thermostat_decide(temp: f64, current: HvacState, cfg: &ThermostatConfig) -> HvacState {
    let mut next = current;
    if temp > cfg.ac_on_above {
        next = HvacState { ac_on: true, furnace_on: false };
    } else if current.ac_on && temp <= cfg.ac_off_at_or_below() {
        next.ac_on = false;
    }
    if temp < cfg.furnace_on_below {
        next = HvacState { ac_on: false, furnace_on: true };
    } else if current.furnace_on && temp >= cfg.furnace_off_at_or_above() {
        next.furnace_on = false;
    }
    if next.ac_on && next.furnace_on {
        // Only reachable from an inconsistent input; keep the side nearer `temp`.
        let mid = (cfg.ac_on_above + cfg.furnace_on_below) / 2.0;
        next = HvacState { ac_on: temp >= mid, furnace_on: temp < mid };
    }
    next
}

#[derive(Debug, Clone, PartialEq)]
pub struct Applied {
    pub state: DeviceState,
    /// False when the attribute already held `value`.
    pub changed: bool,
}

/// Writes one attribute. Re-writing the current value leaves the state
/// (including `last_update`) untouched.
pub fn apply_command(
    state: &DeviceState,
    kind: DeviceKind,
    attribute: &str,
    value: &AttributeValue,
    now: SimTime,
) -> Result<Applied, DevicesError> {
    check_writable(kind, attribute, value)?;
    if state.get(attribute) == Some(value) {
        return Ok(Applied { state: state.clone(), changed: false });
    }
    let mut next = state.clone();
    next.attributes.insert(attribute.to_string(), value.clone());
    next.last_update = next.last_update.max(now);
    Ok(Applied { state: next, changed: true })
}

/// Schema check for a client or rule write.
pub fn check_writable(kind: DeviceKind, attribute: &str, value: &AttributeValue) -> Result<(), DevicesError> {
    let spec = kind
        .attr(attribute)
        .ok_or_else(|| DevicesError::UnknownAttribute { kind, attribute: attribute.to_string() })?;
    if spec.access != Access::Writable {
        return Err(DevicesError::ReadOnly { kind, attribute: attribute.to_string() });
    }
    if spec.ty != value.value_type() {
        return Err(DevicesError::Type {
            kind,
            attribute: attribute.to_string(),
            expected: spec.ty,
            found: value.value_type(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minute() -> SimDuration {
        SimDuration::from_mins(1)
    }

    #[test]
    fn single_euler_step_with_ac() {
        let env = Environment { indoor_temp: 30.0, outdoor_temp: 35.0, ..Environment::default() };
        let thermal = ThermalParams { k_leak: 0.05, q_ac: -0.8, ..ThermalParams::default() };
        let act = Actuators { ac_on: true, ..Actuators::default() };
        let next = step_environment(&env, act, &thermal, &HazardParams::default(), minute()).unwrap();
        assert!((next.indoor_temp - 29.45).abs() < 1e-12, "{}", next.indoor_temp);
    }

    #[test]
    fn equilibrium_without_actuators() {
        let env = Environment { indoor_temp: 21.0, outdoor_temp: 21.0, ..Environment::default() };
        let next =
            step_environment(&env, Actuators::default(), &ThermalParams::default(), &HazardParams::default(), minute())
                .unwrap();
        assert_eq!(next.indoor_temp, 21.0);
    }

    #[test]
    fn lawn_sprinkler_minute() {
        let env = Environment { water_level_pct: 50.0, ..Environment::default() };
        let act = Actuators { lawn_sprinkler_on: true, ..Actuators::default() };
        let next = step_environment(&env, act, &ThermalParams::default(), &HazardParams::default(), minute()).unwrap();
        assert_eq!(next.water_level_pct, 54.5);
    }

    #[test]
    fn non_positive_step_rejected() {
        let r = step_environment(
            &Environment::default(),
            Actuators::default(),
            &ThermalParams::default(),
            &HazardParams::default(),
            SimDuration::ZERO,
        );
        assert!(matches!(r, Err(DevicesError::NonPositiveStep(_))));
    }

    #[test]
    fn fire_clears_after_two_minutes_of_sprinkling() {
        let mut env = Environment { fire_active: true, ..Environment::default() };
        let act = Actuators { fire_sprinkler_on: true, ..Actuators::default() };
        let (t, h) = (ThermalParams::default(), HazardParams::default());
        for _ in 0..119 {
            env = step_environment(&env, act, &t, &h, SimDuration::from_secs(1)).unwrap();
            assert!(env.fire_active);
        }
        env = step_environment(&env, act, &t, &h, SimDuration::from_secs(1)).unwrap();
        assert!(!env.fire_active);
        assert!(env.smoke_ppm > 0.0);
    }

    #[test]
    fn sprinkler_interruption_resets_suppression() {
        let mut env = Environment { fire_active: true, ..Environment::default() };
        let (t, h) = (ThermalParams::default(), HazardParams::default());
        let on = Actuators { fire_sprinkler_on: true, ..Actuators::default() };
        env = step_environment(&env, on, &t, &h, SimDuration::from_secs(100)).unwrap();
        env = step_environment(&env, Actuators::default(), &t, &h, SimDuration::from_secs(1)).unwrap();
        env = step_environment(&env, on, &t, &h, SimDuration::from_secs(100)).unwrap();
        assert!(env.fire_active);
    }

    #[test]
    fn sensors_project_environment() {
        let h = HazardParams::default();
        let ctx = SensorContext::default();
        let env = Environment { fire_active: true, water_level_pct: 40.0, ..Environment::default() };
        let prev = DeviceKind::FireMonitor.initial_state(SimTime::ZERO);
        let r = read_sensor(DeviceKind::FireMonitor, &ctx, &env, &h, &prev, SimTime::ZERO).unwrap();
        assert_eq!(r["fire"], AttributeValue::Bool(true));
        let prev = DeviceKind::SmokeDetector.initial_state(SimTime::ZERO);
        let r = read_sensor(DeviceKind::SmokeDetector, &ctx, &env, &h, &prev, SimTime::ZERO).unwrap();
        assert_eq!(r["smoke"], AttributeValue::Bool(false));
        let prev = DeviceKind::WaterLevelMonitor.initial_state(SimTime::ZERO);
        let r = read_sensor(DeviceKind::WaterLevelMonitor, &ctx, &env, &h, &prev, SimTime::ZERO).unwrap();
        assert_eq!(r["level"], AttributeValue::number(40.0, Unit::Percent));
        let again = read_sensor(DeviceKind::WaterLevelMonitor, &ctx, &env, &h, &prev, SimTime::ZERO).unwrap();
        assert_eq!(r, again);
        assert!(matches!(
            read_sensor(DeviceKind::Light, &ctx, &env, &h, &prev, SimTime::ZERO),
            Err(DevicesError::NotASensor(DeviceKind::Light))
        ));
    }

    #[test]
    fn motion_detector_tracks_its_zone() {
        let h = HazardParams::default();
        let ctx = SensorContext { zone: Some("hall".into()) };
        let mut env = Environment::default();
        env.motion_zones.insert("hall".into());
        let prev = DeviceKind::MotionDetector.initial_state(SimTime::ZERO);
        let r = read_sensor(DeviceKind::MotionDetector, &ctx, &env, &h, &prev, SimTime::from_secs(12)).unwrap();
        assert_eq!(r["motion"], AttributeValue::Bool(true));
        assert_eq!(r["last_motion_at"], AttributeValue::number(12.0, Unit::None));
        env.motion_zones.clear();
        let state = DeviceState { attributes: r, last_update: SimTime::from_secs(12) };
        let r = read_sensor(DeviceKind::MotionDetector, &ctx, &env, &h, &state, SimTime::from_secs(30)).unwrap();
        assert_eq!(r["motion"], AttributeValue::Bool(false));
        assert_eq!(r["last_motion_at"], AttributeValue::number(12.0, Unit::None));
    }

    #[test]
    fn thermostat_thresholds() {
        let cfg = ThermostatConfig::default();
        let off = HvacState::default();
        assert_eq!(thermostat_decide(29.0, off, &cfg), HvacState { ac_on: true, furnace_on: false });
        assert_eq!(thermostat_decide(17.5, off, &cfg), HvacState { ac_on: false, furnace_on: true });
        assert_eq!(thermostat_decide(23.0, off, &cfg), off);
        assert_eq!(thermostat_decide(28.0, off, &cfg), off);
        assert_eq!(thermostat_decide(18.0, off, &cfg), off);
        let cooling = HvacState { ac_on: true, furnace_on: false };
        assert_eq!(thermostat_decide(27.5, cooling, &cfg), cooling);
        assert_eq!(thermostat_decide(27.0, cooling, &cfg), off);
        let heating = HvacState { ac_on: false, furnace_on: true };
        assert_eq!(thermostat_decide(18.5, heating, &cfg), heating);
        assert_eq!(thermostat_decide(19.0, heating, &cfg), off);
    }

    #[test]
    fn thermostat_config_overlap_rejected() {
        let cfg = ThermostatConfig { ac_on_above: 20.0, furnace_on_below: 19.0, hysteresis: 1.0 };
        assert!(cfg.validate().is_err());
        assert!(ThermostatConfig::default().validate().is_ok());
    }

    #[test]
    fn apply_command_contract() {
        let light = DeviceKind::Light.initial_state(SimTime::ZERO);
        let a = apply_command(&light, DeviceKind::Light, "on", &AttributeValue::Bool(true), SimTime::from_secs(3))
            .unwrap();
        assert!(a.changed);
        assert_eq!(a.state.last_update, SimTime::from_secs(3));
        let b = apply_command(&a.state, DeviceKind::Light, "on", &AttributeValue::Bool(true), SimTime::from_secs(9))
            .unwrap();
        assert!(!b.changed);
        assert_eq!(b.state, a.state);
        let window = DeviceKind::Window.initial_state(SimTime::ZERO);
        let e = apply_command(&window, DeviceKind::Window, "open", &AttributeValue::Text("yes".into()), SimTime::ZERO);
        assert!(matches!(e, Err(DevicesError::Type { .. })));
        let fire = DeviceKind::FireMonitor.initial_state(SimTime::ZERO);
        let e = apply_command(&fire, DeviceKind::FireMonitor, "fire", &AttributeValue::Bool(true), SimTime::ZERO);
        assert!(matches!(e, Err(DevicesError::ReadOnly { .. })));
    }

    #[test]
    fn outdoor_schedule_interpolates() {
        let s = OutdoorSchedule { points: vec![(0.0, 10.0), (100.0, 40.0)] };
        assert_eq!(s.at(SimTime::ZERO), Some(10.0));
        assert_eq!(s.at(SimTime::from_secs(50)), Some(25.0));
        assert_eq!(s.at(SimTime::from_secs(500)), Some(40.0));
        assert_eq!(OutdoorSchedule::default().at(SimTime::ZERO), None);
    }
}
