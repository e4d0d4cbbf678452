//! Deterministic discrete-event engine: virtual clock and scheduler, lossy
//! message transport, and uptime/latency metrics.

mod metrics;
mod net;
mod rng;
mod scheduler;

pub use metrics::{
    percentile_nearest_rank, run_report, uptime_fraction, Interval, MetricsError, MetricsTargets, Report,
    RunMetrics, TargetCheck, Verdict,
};
pub use net::{sample_latency, Message, MessageDraft, NetConfig, NetError, Network, SendOutcome, TransportStats};
pub use rng::SimRng;
pub use scheduler::{EventId, Scheduler, SimError, SimEvent, Target};
