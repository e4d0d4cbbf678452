use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use super::rng::SimRng;
use crate::domain::{MessageKind, SimDuration, SimTime};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("latency_base must be positive")]
    NonPositiveBase,
    #[error("latency_jitter must not be negative")]
    NegativeJitter,
    #[error("loss_probability {0} outside [0, 1)")]
    LossOutOfRange(f64),
    #[error("message source and destination are both {0}")]
    Loopback(String),
}

/// Transport parameters. Latency is uniform on `[base, base + jitter)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    #[serde(rename = "latency_base_ms", with = "millis")]
    pub latency_base: SimDuration,
    #[serde(rename = "latency_jitter_ms", with = "millis")]
    pub latency_jitter: SimDuration,
    #[serde(default)]
    pub loss_probability: f64,
    /// Transport stream seed; scenarios default it to the run seed.
    #[serde(default)]
    pub seed: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            latency_base: SimDuration::from_millis(2),
            latency_jitter: SimDuration::from_millis(6),
            loss_probability: 0.0,
            seed: 0,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        if self.latency_base <= SimDuration::ZERO {
            return Err(NetError::NonPositiveBase);
        }
        if self.latency_jitter.is_negative() {
            return Err(NetError::NegativeJitter);
        }
        if !(0.0..1.0).contains(&self.loss_probability) {
            return Err(NetError::LossOutOfRange(self.loss_probability));
        }
        Ok(())
    }
}

mod millis {
    use super::*;

    pub fn serialize<S: Serializer>(d: &SimDuration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_millis_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<SimDuration, D::Error> {
        let ms = f64::deserialize(d)?;
        if !ms.is_finite() {
            return Err(serde::de::Error::custom("duration must be finite"));
        }
        Ok(SimDuration::from_nanos((ms * 1e6).round() as i64))
    }
}

/// `base + floor(u * jitter)` with `u` uniform on `[0, 1)`.
pub fn sample_latency(cfg: &NetConfig, rng: &mut SimRng) -> SimDuration {
    let u = rng.next_f64();
    let extra = (u * cfg.latency_jitter.as_nanos() as f64).floor() as i64;
    SimDuration::from_nanos(cfg.latency_base.as_nanos() + extra)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MessageDraft<P> {
    pub src: String,
    pub dst: String,
    pub kind: MessageKind,
    pub payload: P,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message<P> {
    pub id: u64,
    pub src: String,
    pub dst: String,
    pub kind: MessageKind,
    pub payload: P,
    pub send_time: SimTime,
    pub deliver_time: SimTime,
}

impl<P> Message<P> {
    pub fn latency(&self) -> SimDuration {
        self.deliver_time - self.send_time
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SendOutcome<P> {
    Delivered(Message<P>),
    Dropped { id: u64, draft: MessageDraft<P>, send_time: SimTime },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct TransportStats {
    pub sent: u64,
    pub delivered: u64,
    pub dropped: u64,
}

/// The shared wireless medium. Each send draws one loss variate and one
/// latency variate from the transport stream, in that order.
#[derive(Debug, Clone)]
pub struct Network {
    cfg: NetConfig,
    rng: SimRng,
    next_id: u64,
    stats: TransportStats,
    latencies: Vec<SimDuration>,
}

impl Network {
    pub fn new(cfg: NetConfig) -> Result<Self, NetError> {
        cfg.validate()?;
        let rng = SimRng::stream(cfg.seed, "net");
        Ok(Network { cfg, rng, next_id: 0, stats: TransportStats::default(), latencies: Vec::new() })
    }

    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    /// Id the next `send` will assign.
    pub fn next_id(&self) -> u64 {
        self.next_id
    }

    pub fn stats(&self) -> TransportStats {
        self.stats
    }

    /// Latencies of every delivered message, in send order.
    pub fn latencies(&self) -> &[SimDuration] {
        &self.latencies
    }

    pub fn send<P>(&mut self, draft: MessageDraft<P>, now: SimTime) -> Result<SendOutcome<P>, NetError> {
        if draft.src == draft.dst {
            return Err(NetError::Loopback(draft.src));
        }
        let id = self.next_id;
        self.next_id += 1;
        self.stats.sent += 1;
        let lost = self.rng.next_f64() < self.cfg.loss_probability;
        let latency = sample_latency(&self.cfg, &mut self.rng);
        if lost {
            self.stats.dropped += 1;
            return Ok(SendOutcome::Dropped { id, draft, send_time: now });
        }
        self.stats.delivered += 1;
        self.latencies.push(latency);
        Ok(SendOutcome::Delivered(Message {
            id,
            src: draft.src,
            dst: draft.dst,
            kind: draft.kind,
            payload: draft.payload,
            send_time: now,
            deliver_time: now + latency,
        }))
    }
}
