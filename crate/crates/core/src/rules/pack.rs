use super::ast::RuleAst;
use super::parser::parse_rules;
use crate::devices::ThermostatConfig;

/// The five standard automations: cooling, heating, fire safety, lawn
/// watering and motion lighting.
pub const STANDARD_PACK: &str = include_str!("../../rules/standard.rules");

/// Lawn sprinkler band in percent of water level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LawnThresholds {
    pub on_below: f64,
    pub off_above: f64,
}

impl Default for LawnThresholds {
    fn default() -> Self {
        LawnThresholds { on_below: 33.0, off_above: 66.0 }
    }
}

pub fn standard_pack() -> Vec<RuleAst> {
    parse_rules(STANDARD_PACK).expect("bundled rule pack parses")
}

/// Release rules for the level-triggered pack: AC and furnace off at the
/// hysteresis edges, lawn sprinkler off above its band, and lights and webcam
/// off once the motion detector has been idle for `motion_timeout_s`.
///
/// The motion release only holds during the one-second window after the
/// timeout, so a light switched on later by a client stays on. With the 1 s
/// evaluation tick exactly one tick falls inside that window.
pub fn companion_rules(thermostat: &ThermostatConfig, lawn: &LawnThresholds, motion_timeout_s: f64) -> Vec<RuleAst> {
    let text = format!(
        "rule cooling_release: when ac.on = true and thermostat.temperature <= {ac_off:?}C \
             then set ac.on = false\n\
         rule heating_release: when furnace.on = true and thermostat.temperature >= {furnace_off:?}C \
             then set furnace.on = false\n\
         rule lawn_water_release: when lawn_sprinkler.on = true and water_level_monitor.level > {lawn_off:?}% \
             then set lawn_sprinkler.on = false\n\
         rule motion_timeout: when motion_detector.motion = false and motion_detector.idle_s >= {idle:?} \
             and motion_detector.idle_s < {idle_end:?} \
             then set light.on = false, set webcam.recording = false\n",
        ac_off = thermostat.ac_off_at_or_below(),
        furnace_off = thermostat.furnace_off_at_or_above(),
        lawn_off = lawn.off_above,
        idle = motion_timeout_s,
        idle_end = motion_timeout_s + 1.0,
    );
    parse_rules(&text).expect("generated companion rules parse")
}
