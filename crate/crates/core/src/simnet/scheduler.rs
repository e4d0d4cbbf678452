use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{DeviceId, SimDuration, SimTime};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error("negative delay {0}")]
    NegativeDelay(SimDuration),
    #[error("cannot schedule at {at}, clock is already at {now}")]
    InPast { at: SimTime, now: SimTime },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EventId(pub u64);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Device(DeviceId),
    Gateway,
    Environment,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimEvent<P> {
    pub id: EventId,
    pub fire_at: SimTime,
    pub target: Target,
    pub payload: P,
}

struct Queued<P>(SimEvent<P>);

impl<P> Queued<P> {
    fn key(&self) -> (SimTime, EventId) {
        (self.0.fire_at, self.0.id)
    }
}

impl<P> PartialEq for Queued<P> {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl<P> Eq for Queued<P> {}

impl<P> PartialOrd for Queued<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<P> Ord for Queued<P> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key().cmp(&other.key())
    }
}

/// Virtual clock plus a min-queue of pending events ordered by
/// `(fire_at, id)`, so simultaneous events fire in scheduling order.
pub struct Scheduler<P> {
    now: SimTime,
    next_id: u64,
    queue: BinaryHeap<Reverse<Queued<P>>>,
}

impl<P> Default for Scheduler<P> {
    fn default() -> Self {
        Self::new()
    }
}

impl<P> Scheduler<P> {
    pub fn new() -> Self {
        Scheduler { now: SimTime::ZERO, next_id: 0, queue: BinaryHeap::new() }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn schedule(&mut self, target: Target, payload: P, delay: SimDuration) -> Result<EventId, SimError> {
        if delay.is_negative() {
            return Err(SimError::NegativeDelay(delay));
        }
        self.push(self.now + delay, target, payload)
    }

    pub fn schedule_at(&mut self, at: SimTime, target: Target, payload: P) -> Result<EventId, SimError> {
        if at < self.now {
            return Err(SimError::InPast { at, now: self.now });
        }
        self.push(at, target, payload)
    }

    fn push(&mut self, fire_at: SimTime, target: Target, payload: P) -> Result<EventId, SimError> {
        let id = EventId(self.next_id);
        self.next_id += 1;
        self.queue.push(Reverse(Queued(SimEvent { id, fire_at, target, payload })));
        Ok(id)
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.queue.peek().map(|Reverse(q)| q.0.fire_at)
    }

    /// Pops the single earliest event and advances the clock to it.
    pub fn pop_next(&mut self) -> Option<SimEvent<P>> {
        let Reverse(Queued(ev)) = self.queue.pop()?;
        debug_assert!(ev.fire_at >= self.now);
        self.now = ev.fire_at;
        Some(ev)
    }

    /// Advances to the earliest pending time and returns every event due at
    /// exactly that instant, in id order. `None` when the queue is idle; the
    /// clock is then left unchanged.
    pub fn step(&mut self) -> Option<(SimTime, Vec<SimEvent<P>>)> {
        let at = self.peek_time()?;
        let mut fired = Vec::new();
        while self.peek_time() == Some(at) {
            fired.extend(self.pop_next());
        }
        Some((at, fired))
    }

    /// Moves an idle clock forward to `t` without firing anything. Has no
    /// effect if `t` is in the past or events are due before `t`.
    pub fn advance_idle_to(&mut self, t: SimTime) {
        if t > self.now && self.peek_time().is_none_or(|next| next >= t) {
            self.now = t;
        }
    }
}
