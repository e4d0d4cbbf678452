//! Scenario files: one JSON document describing the home, network, rules and
//! a timeline of stimuli. See `docs/SCENARIO.md` for the schema.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::access::{AccessPolicy, RfidCard};
use crate::devices::{Environment, HazardParams, OutdoorSchedule, ThermalParams, ThermostatConfig};
use crate::domain::{rule_handle, AttributeValue, DeviceKind, Portal, SimTime};
use crate::gateway::{Gateway, GatewayConfig};
use crate::rules::{companion_rules, parse_rules, standard_pack, typecheck_rule, DirectorySchema, LawnThresholds, RuleAst};
use crate::simnet::NetConfig;

/// Scenarios shipped with the crate, by name.
pub const BUNDLED: &[(&str, &str)] = &[
    ("demo-home", include_str!("../scenarios/demo-home.json")),
    ("fire-demo", include_str!("../scenarios/fire-demo.json")),
    ("attacks-demo", include_str!("../scenarios/attacks-demo.json")),
    ("uptime-demo", include_str!("../scenarios/uptime-demo.json")),
    ("thermostat-day", include_str!("../scenarios/thermostat-day.json")),
];

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error("invalid scenario:\n{}", .0.iter().map(|d| format!("  {d}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<Diagnostic>),
}

/// One semantic problem, located by a JSON-pointer-like field path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub field: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Meta {
    pub name: String,
    pub seed: u64,
    pub duration_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentSection {
    #[serde(default)]
    pub initial: Environment,
    #[serde(default)]
    pub thermal: ThermalParams,
    #[serde(default)]
    pub hazard: HazardParams,
    /// Outdoor temperature schedule; empty keeps `initial.outdoor_temp`.
    #[serde(default)]
    pub outdoor: OutdoorSchedule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AutomationSection {
    #[serde(default)]
    pub thermostat: ThermostatConfig,
    #[serde(default = "default_lawn_on")]
    pub lawn_on_below_pct: f64,
    #[serde(default = "default_lawn_off")]
    pub lawn_off_above_pct: f64,
    #[serde(default = "default_motion_timeout")]
    pub motion_timeout_s: f64,
}

fn default_lawn_on() -> f64 {
    LawnThresholds::default().on_below
}

fn default_lawn_off() -> f64 {
    LawnThresholds::default().off_above
}

fn default_motion_timeout() -> f64 {
    60.0
}

impl Default for AutomationSection {
    fn default() -> Self {
        AutomationSection {
            thermostat: ThermostatConfig::default(),
            lawn_on_below_pct: default_lawn_on(),
            lawn_off_above_pct: default_lawn_off(),
            motion_timeout_s: default_motion_timeout(),
        }
    }
}

impl AutomationSection {
    pub fn lawn(&self) -> LawnThresholds {
        LawnThresholds { on_below: self.lawn_on_below_pct, off_above: self.lawn_off_above_pct }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceSpec {
    /// Display name; the rule handle replaces whitespace with `_`.
    pub name: String,
    pub kind: DeviceKind,
    /// Motion zone watched by a motion detector.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zone: Option<String>,
    /// Portal guarded by an RFID reader.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub portal: Option<Portal>,
    /// Join secret presented instead of the gateway's (for attack scripts).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub secret: Option<String>,
    /// When the device powers on and sends its first join.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub join_at_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RulesSection {
    /// Load the standard pack (rules whose devices are all in the roster).
    #[serde(default = "yes")]
    pub standard: bool,
    /// Add the generated release rules for the standard pack.
    #[serde(default = "yes")]
    pub companions: bool,
    #[serde(default)]
    pub inline: String,
    /// Rule files, relative to the scenario file.
    #[serde(default)]
    pub files: Vec<PathBuf>,
}

fn yes() -> bool {
    true
}

impl Default for RulesSection {
    fn default() -> Self {
        RulesSection { standard: true, companions: true, inline: String::new(), files: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "stimulus", rename_all = "snake_case", deny_unknown_fields)]
pub enum Stimulus {
    // Empty braces keep extra keys rejected; unit variants would ignore them.
    FireStart {},
    FireStop {},
    Motion { zone: String, duration_s: f64 },
    /// Adds `level_delta` percentage points to the lawn water level.
    Rain { level_delta: f64 },
    /// `reader` is the display name of an RFID reader.
    Swipe { reader: String, card: RfidCard },
    GatewayDown {},
    GatewayUp {},
    Login { username: String, password: String },
    /// Sent with the latest session of `username` from an earlier login.
    ClientCommand { username: String, device: String, attribute: String, value: AttributeValue },
}

impl Stimulus {
    pub fn name(&self) -> &'static str {
        match self {
            Stimulus::FireStart {} => "fire_start",
            Stimulus::FireStop {} => "fire_stop",
            Stimulus::Motion { .. } => "motion",
            Stimulus::Rain { .. } => "rain",
            Stimulus::Swipe { .. } => "swipe",
            Stimulus::GatewayDown {} => "gateway_down",
            Stimulus::GatewayUp {} => "gateway_up",
            Stimulus::Login { .. } => "login",
            Stimulus::ClientCommand { .. } => "client_command",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedStimulus {
    pub at_s: f64,
    #[serde(flatten)]
    pub stimulus: Stimulus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub meta: Meta,
    #[serde(default)]
    pub net: NetConfig,
    #[serde(default)]
    pub environment: EnvironmentSection,
    #[serde(default)]
    pub automation: AutomationSection,
    #[serde(default)]
    pub gateway: GatewayConfig,
    pub devices: Vec<DeviceSpec>,
    #[serde(default)]
    pub access: AccessPolicy,
    #[serde(default)]
    pub rules: RulesSection,
    #[serde(default)]
    pub timeline: Vec<TimedStimulus>,
    /// Directory that relative rule file paths resolve against.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

/// Converts seconds to simulated time, rounding to the nearest nanosecond.
pub fn secs(s: f64) -> SimTime {
    SimTime::from_nanos((s * 1e9).round().max(0.0) as u64)
}

/// Command-line overrides applied before validation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub duration_s: Option<f64>,
}

impl Scenario {
    /// Parses and validates a scenario document.
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        Self::from_json_with(text, &Overrides::default())
    }

    pub fn from_json_with(text: &str, overrides: &Overrides) -> Result<Self, ScenarioError> {
        Self::from_json_with_base(text, overrides, None)
    }

    /// Loads a scenario file, or a bundled scenario when `path` names one and
    /// no such file exists.
    pub fn load(path: impl AsRef<Path>, overrides: &Overrides) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        if !path.exists() {
            if let Some(text) = bundled(&path.to_string_lossy()) {
                return Self::from_json_with(text, overrides);
            }
        }
        let text = std::fs::read_to_string(path)
            .map_err(|source| ScenarioError::Io { path: path.to_path_buf(), source })?;
        Self::from_json_with_base(&text, overrides, path.parent())
    }

    fn from_json_with_base(text: &str, overrides: &Overrides, base: Option<&Path>) -> Result<Self, ScenarioError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let mut scenario: Scenario = serde_path_to_error::deserialize(de).map_err(|e| ScenarioError::Schema {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        scenario.base_dir = base.map(Path::to_path_buf);
        if let Some(seed) = overrides.seed {
            scenario.meta.seed = seed;
        }
        if let Some(d) = overrides.duration_s {
            scenario.meta.duration_s = d;
        }
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn bundled(name: &str) -> Result<Self, ScenarioError> {
        let text = bundled(name).ok_or_else(|| ScenarioError::Invalid(vec![Diagnostic {
            field: "scenario".into(),
            message: format!("no bundled scenario named `{name}`"),
        }]))?;
        Self::from_json(text)
    }

    pub fn duration(&self) -> SimTime {
        secs(self.meta.duration_s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario is serializable")
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let mut diags = Vec::new();
        let mut bad = |field: &str, message: String| diags.push(Diagnostic { field: field.to_string(), message });

        if self.meta.name.trim().is_empty() {
            bad("/meta/name", "must not be empty".into());
        }
        if !(self.meta.duration_s.is_finite() && self.meta.duration_s > 0.0) {
            bad("/meta/duration_s", "must be a positive number of seconds".into());
        }
        if let Err(e) = self.net.validate() {
            bad("/net", e.to_string());
        }
        if self.net.seed != 0 {
            bad("/net/seed", "the transport is seeded from /meta/seed".into());
        }
        if let Err(e) = self.environment.initial.validate() {
            bad("/environment/initial", e.to_string());
        }
        if let Err(e) = self.environment.thermal.validate() {
            bad("/environment/thermal", e.to_string());
        }
        if let Err(e) = self.environment.outdoor.validate() {
            bad("/environment/outdoor", e.to_string());
        }
        if let Err(e) = self.automation.thermostat.validate() {
            bad("/automation/thermostat", e.to_string());
        }
        let a = &self.automation;
        if !(a.lawn_on_below_pct.is_finite() && a.lawn_off_above_pct.is_finite() && a.lawn_on_below_pct < a.lawn_off_above_pct)
        {
            bad("/automation", "lawn band must satisfy lawn_on_below_pct < lawn_off_above_pct".into());
        }
        if !(a.motion_timeout_s.is_finite() && a.motion_timeout_s > 0.0) {
            bad("/automation/motion_timeout_s", "must be positive".into());
        }
        if let Err(e) = self.access.validate() {
            bad("/access", e.to_string());
        }
        if let Err(e) = Gateway::new(&self.gateway, 0) {
            bad("/gateway", e.to_string());
        }

        let mut names = BTreeSet::new();
        let mut handles = BTreeSet::new();
        for (i, d) in self.devices.iter().enumerate() {
            let at = |f: &str| format!("/devices/{i}{f}");
            if d.name.trim().is_empty() {
                bad(&at("/name"), "must not be empty".into());
            } else if !names.insert(d.name.clone()) {
                bad(&at("/name"), format!("duplicate device name `{}`", d.name));
            } else if !handles.insert(rule_handle(&d.name)) {
                bad(&at("/name"), format!("rule handle `{}` collides with another device", rule_handle(&d.name)));
            }
            if d.zone.is_some() && d.kind != DeviceKind::MotionDetector {
                bad(&at("/zone"), "only motion detectors watch a zone".into());
            }
            match (d.kind, d.portal) {
                (DeviceKind::RfidReader, None) => bad(&at("/portal"), "an RFID reader must guard a portal".into()),
                (DeviceKind::RfidReader, Some(_)) | (_, None) => {}
                (_, Some(_)) => bad(&at("/portal"), "only RFID readers guard a portal".into()),
            }
            if let Some(s) = &d.secret {
                if s.is_empty() {
                    bad(&at("/secret"), "must not be empty".into());
                }
            }
            if let Some(t) = d.join_at_s {
                if !(t.is_finite() && t >= 0.0 && t <= self.meta.duration_s) {
                    bad(&at("/join_at_s"), "must lie within the run".into());
                }
            }
        }

        let mut prev = 0.0;
        for (i, ts) in self.timeline.iter().enumerate() {
            let at = |f: &str| format!("/timeline/{i}{f}");
            if !(ts.at_s.is_finite() && ts.at_s >= 0.0 && ts.at_s <= self.meta.duration_s) {
                bad(&at("/at_s"), format!("{} is outside [0, {}]", ts.at_s, self.meta.duration_s));
            } else if ts.at_s < prev {
                bad(&at("/at_s"), "timeline must be in time order".into());
            } else {
                prev = ts.at_s;
            }
            match &ts.stimulus {
                Stimulus::Motion { duration_s, .. } if !(duration_s.is_finite() && *duration_s > 0.0) => {
                    bad(&at("/duration_s"), "must be positive".into())
                }
                Stimulus::Rain { level_delta } if !level_delta.is_finite() => {
                    bad(&at("/level_delta"), "must be finite".into())
                }
                Stimulus::Swipe { reader, .. } => match self.device(reader) {
                    None => bad(&at("/reader"), format!("no device named `{reader}`")),
                    Some(d) if d.kind != DeviceKind::RfidReader => {
                        bad(&at("/reader"), format!("`{reader}` is not an RFID reader"))
                    }
                    Some(_) => {}
                },
                Stimulus::ClientCommand { device, value, .. } => match self.device(device) {
                    None => bad(&at("/device"), format!("no device named `{device}`")),
                    Some(_) if !value.is_finite() => bad(&at("/value"), "must be finite".into()),
                    Some(_) => {}
                },
                _ => {}
            }
        }

        if let Err(mut e) = self.compile_rules() {
            match &mut e {
                ScenarioError::Invalid(d) => diags.append(d),
                other => diags.push(Diagnostic { field: "/rules".into(), message: other.to_string() }),
            }
        }

        if diags.is_empty() {
            Ok(())
        } else {
            Err(ScenarioError::Invalid(diags))
        }
    }

    pub fn device(&self, name: &str) -> Option<&DeviceSpec> {
        self.devices.iter().find(|d| d.name == name)
    }

    pub fn schema(&self) -> DirectorySchema {
        let mut s = DirectorySchema::default();
        for d in &self.devices {
            s.insert(rule_handle(&d.name), d.kind);
        }
        s
    }

    /// The rule set of this scenario, type-checked against the roster.
    /// Standard and companion rules that mention devices absent from the
    /// roster are left out; inline and file rules must check in full.
    pub fn compile_rules(&self) -> Result<Vec<RuleAst>, ScenarioError> {
        let schema = self.schema();
        let mut rules = Vec::new();
        let fits = |r: &RuleAst| typecheck_rule(r, &schema).is_ok();
        if self.rules.standard {
            rules.extend(standard_pack().into_iter().filter(fits));
        }
        if self.rules.companions {
            let a = &self.automation;
            rules.extend(companion_rules(&a.thermostat, &a.lawn(), a.motion_timeout_s).into_iter().filter(fits));
        }
        let mut diags = Vec::new();
        let mut extra = Vec::new();
        if !self.rules.inline.trim().is_empty() {
            extra.push(("/rules/inline".to_string(), self.rules.inline.clone()));
        }
        for (i, f) in self.rules.files.iter().enumerate() {
            let path = match &self.base_dir {
                Some(b) if f.is_relative() => b.join(f),
                _ => f.clone(),
            };
            match std::fs::read_to_string(&path) {
                Ok(text) => extra.push((format!("/rules/files/{i}"), text)),
                Err(e) => diags.push(Diagnostic { field: format!("/rules/files/{i}"), message: format!("{}: {e}", path.display()) }),
            }
        }
        for (field, text) in extra {
            match parse_rules(&text) {
                Err(e) => diags.push(Diagnostic { field, message: e.to_string() }),
                Ok(parsed) => {
                    for r in parsed {
                        if let Err(errs) = typecheck_rule(&r, &schema) {
                            diags.extend(errs.into_iter().map(|e| Diagnostic { field: field.clone(), message: e.to_string() }));
                        }
                        rules.push(r);
                    }
                }
            }
        }
        let mut seen = BTreeSet::new();
        for r in &rules {
            if !seen.insert(r.name.clone()) {
                diags.push(Diagnostic { field: "/rules".into(), message: format!("duplicate rule name `{}`", r.name) });
            }
        }
        if diags.is_empty() {
            Ok(rules)
        } else {
            Err(ScenarioError::Invalid(diags))
        }
    }
}

pub fn bundled(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> serde_json::Value {
        serde_json::json!({
            "meta": {"name": "t", "seed": 1, "duration_s": 10},
            "devices": [{"name": "light", "kind": "light"}],
        })
    }

    #[test]
    fn bundled_scenarios_validate() {
        for (name, _) in BUNDLED {
            let s = Scenario::bundled(name).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(&s.meta.name, name);
        }
    }

    #[test]
    fn missing_seed_is_a_schema_error() {
        let mut v = minimal();
        v["meta"].as_object_mut().unwrap().remove("seed");
        match Scenario::from_json(&v.to_string()) {
            Err(ScenarioError::Schema { path, message }) => {
                assert_eq!(path, "meta");
                assert!(message.contains("seed"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_field_is_a_schema_error() {
        let mut v = minimal();
        v["devices"][0]["colour"] = "red".into();
        assert!(matches!(Scenario::from_json(&v.to_string()), Err(ScenarioError::Schema { .. })));
    }

    #[test]
    fn unknown_field_in_timeline_entry_is_a_schema_error() {
        for entry in [
            serde_json::json!({"at_s": 1, "stimulus": "fire_start", "colour": "red"}),
            serde_json::json!({"at_s": 1, "stimulus": "gateway_down", "for_s": 3}),
            serde_json::json!({"at_s": 1, "stimulus": "rain", "level_delta": 2, "extra": 1}),
        ] {
            let mut v = minimal();
            v["timeline"] = serde_json::json!([entry]);
            assert!(
                matches!(Scenario::from_json(&v.to_string()), Err(ScenarioError::Schema { .. })),
                "{entry}"
            );
        }
        let mut v = minimal();
        v["timeline"] = serde_json::json!([{"at_s": 1, "stimulus": "fire_start"}]);
        assert!(Scenario::from_json(&v.to_string()).is_ok());
    }

    #[test]
    fn semantic_errors_are_collected() {
        let mut v = minimal();
        v["meta"]["duration_s"] = 5.into();
        v["timeline"] = serde_json::json!([
            {"at_s": 9, "stimulus": "fire_start"},
            {"at_s": 1, "stimulus": "swipe", "reader": "ghost", "card": "1"},
        ]);
        v["rules"] = serde_json::json!({"inline": "rule x: when ghost.on = true then set light.on = true"});
        let Err(ScenarioError::Invalid(d)) = Scenario::from_json(&v.to_string()) else { panic!() };
        let fields: Vec<_> = d.iter().map(|d| d.field.as_str()).collect();
        assert!(fields.contains(&"/timeline/0/at_s"), "{fields:?}");
        assert!(fields.contains(&"/timeline/1/reader"), "{fields:?}");
        assert!(fields.contains(&"/rules/inline"), "{fields:?}");
    }

    #[test]
    fn standard_pack_is_filtered_to_roster() {
        let s = Scenario::from_json(&minimal().to_string()).unwrap();
        assert!(s.compile_rules().unwrap().is_empty());
        let full = Scenario::bundled("demo-home").unwrap();
        let names: Vec<_> = full.compile_rules().unwrap().into_iter().map(|r| r.name).collect();
        assert_eq!(
            names,
            [
                "cooling",
                "heating",
                "fire_safety",
                "lawn_water",
                "motion_lights",
                "cooling_release",
                "heating_release",
                "lawn_water_release",
                "motion_timeout"
            ]
        );
    }

    #[test]
    fn overrides_apply() {
        let o = Overrides { seed: Some(99), duration_s: Some(3.0) };
        let s = Scenario::from_json_with(&minimal().to_string(), &o).unwrap();
        assert_eq!(s.meta.seed, 99);
        assert_eq!(s.duration(), SimTime::from_secs(3));
    }
}
