use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{AlertCategory, SimDuration, SimTime};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("horizon must be positive")]
    EmptyHorizon,
    #[error("interval {start}..{end} is reversed or outside the horizon")]
    OutOfRange { start: SimTime, end: SimTime },
    #[error("down intervals overlap at {0}")]
    Overlap(SimTime),
}

/// Half-open `[start, end)` span of simulated time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Interval {
    pub start: SimTime,
    pub end: SimTime,
}

/// Fraction of `[0, horizon)` not covered by `down` intervals.
pub fn uptime_fraction(down: &[Interval], horizon: SimTime) -> Result<f64, MetricsError> {
    if horizon == SimTime::ZERO {
        return Err(MetricsError::EmptyHorizon);
    }
    let mut sorted = down.to_vec();
    sorted.sort();
    let mut down_ns: u64 = 0;
    let mut prev_end = SimTime::ZERO;
    for iv in &sorted {
        if iv.end < iv.start || iv.end > horizon {
            return Err(MetricsError::OutOfRange { start: iv.start, end: iv.end });
        }
        if iv.start < prev_end {
            return Err(MetricsError::Overlap(iv.start));
        }
        down_ns += iv.end.as_nanos() - iv.start.as_nanos();
        prev_end = iv.end;
    }
    let h = horizon.as_nanos();
    Ok((h - down_ns) as f64 / h as f64)
}

/// Nearest-rank percentile: the sample at 1-based rank `ceil(p/100 * n)` of
/// the sorted data.
pub fn percentile_nearest_rank(samples: &[SimDuration], p: f64) -> Option<SimDuration> {
    if samples.is_empty() || !(0.0..=100.0).contains(&p) {
        return None;
    }
    let mut sorted = samples.to_vec();
    sorted.sort_unstable();
    let n = sorted.len();
    let rank = ((p / 100.0) * n as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, n) - 1])
}

/// Quantitative targets a run is judged against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsTargets {
    pub uptime_min: f64,
    pub latency_p99_max: SimDuration,
}

impl Default for MetricsTargets {
    fn default() -> Self {
        MetricsTargets { uptime_min: 0.99, latency_p99_max: SimDuration::from_millis(10) }
    }
}

/// Measurements collected from one run (live or replayed).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub uptime_fraction: Option<f64>,
    pub latency_samples: Vec<SimDuration>,
    pub delivered_count: u64,
    pub dropped_count: u64,
    pub alert_count_by_category: BTreeMap<AlertCategory, u64>,
    /// Time from run start to the first successful registration.
    pub start_time: Option<SimDuration>,
    /// Rejected joins, completed bad-login bursts and denied swipes.
    pub attacks_observed: u64,
    /// Those of `attacks_observed` that raised a security alert.
    pub attacks_alerted: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    NotMeasured,
}

impl Verdict {
    pub fn label(self) -> &'static str {
        match self {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
            Verdict::NotMeasured => "not measured",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetCheck {
    pub measured: Option<f64>,
    pub target: f64,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    /// Uptime fraction against the minimum.
    pub uptime: TargetCheck,
    /// p99 latency in milliseconds against the (exclusive) maximum.
    pub latency_p99_ms: TargetCheck,
    pub latency_p50_ms: Option<f64>,
    pub latency_p95_ms: Option<f64>,
    pub delivered: u64,
    pub dropped: u64,
    pub alerts: BTreeMap<AlertCategory, u64>,
    pub attacks_observed: u64,
    pub attacks_alerted: u64,
    pub attack_detection_rate: Option<f64>,
    pub start_time_ms: Option<f64>,
}

impl Report {
    pub fn all_pass(&self) -> bool {
        self.uptime.verdict == Verdict::Pass && self.latency_p99_ms.verdict == Verdict::Pass
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&serde_json::to_value(self).expect("report is serializable"))
            .expect("report is serializable")
    }

    pub fn to_text_table(&self) -> String {
        fn opt(v: Option<f64>, digits: usize) -> String {
            v.map_or_else(|| "not measured".to_string(), |x| format!("{x:.digits$}"))
        }
        let mut out = String::new();
        let rows: Vec<(String, String, String)> = vec![
            (
                "uptime fraction".into(),
                opt(self.uptime.measured, 6),
                format!(">= {}  {}", self.uptime.target, self.uptime.verdict.label()),
            ),
            (
                "latency p99 (ms)".into(),
                opt(self.latency_p99_ms.measured, 3),
                format!("< {}  {}", self.latency_p99_ms.target, self.latency_p99_ms.verdict.label()),
            ),
            ("latency p95 (ms)".into(), opt(self.latency_p95_ms, 3), String::new()),
            ("latency p50 (ms)".into(), opt(self.latency_p50_ms, 3), String::new()),
            ("messages delivered".into(), self.delivered.to_string(), String::new()),
            ("messages dropped".into(), self.dropped.to_string(), String::new()),
            ("time to first registration (ms)".into(), opt(self.start_time_ms, 3), String::new()),
            (
                "attack detection".into(),
                format!("{}/{}", self.attacks_alerted, self.attacks_observed),
                opt(self.attack_detection_rate, 3),
            ),
        ];
        let mut rows = rows;
        for cat in AlertCategory::ALL {
            let n = self.alerts.get(&cat).copied().unwrap_or(0);
            rows.push((format!("alerts: {}", cat.name()), n.to_string(), String::new()));
        }
        let w0 = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
        let w1 = rows.iter().map(|r| r.1.len()).max().unwrap_or(0);
        for (a, b, c) in rows {
            let line = format!("{a:<w0$}  {b:>w1$}  {c}");
            let _ = writeln!(out, "{}", line.trim_end());
        }
        out
    }
}

pub fn run_report(metrics: &RunMetrics, targets: &MetricsTargets) -> Report {
    let uptime = TargetCheck {
        measured: metrics.uptime_fraction,
        target: targets.uptime_min,
        verdict: match metrics.uptime_fraction {
            None => Verdict::NotMeasured,
            Some(u) if u >= targets.uptime_min => Verdict::Pass,
            Some(_) => Verdict::Fail,
        },
    };
    let pct = |p| percentile_nearest_rank(&metrics.latency_samples, p).map(SimDuration::as_millis_f64);
    let p99 = pct(99.0);
    let max_ms = targets.latency_p99_max.as_millis_f64();
    let latency_p99_ms = TargetCheck {
        measured: p99,
        target: max_ms,
        verdict: match p99 {
            None => Verdict::NotMeasured,
            Some(v) if v < max_ms => Verdict::Pass,
            Some(_) => Verdict::Fail,
        },
    };
    Report {
        uptime,
        latency_p99_ms,
        latency_p50_ms: pct(50.0),
        latency_p95_ms: pct(95.0),
        delivered: metrics.delivered_count,
        dropped: metrics.dropped_count,
        alerts: metrics.alert_count_by_category.clone(),
        attacks_observed: metrics.attacks_observed,
        attacks_alerted: metrics.attacks_alerted,
        attack_detection_rate: (metrics.attacks_observed > 0)
            .then(|| metrics.attacks_alerted as f64 / metrics.attacks_observed as f64),
        start_time_ms: metrics.start_time.map(SimDuration::as_millis_f64),
    }
}
