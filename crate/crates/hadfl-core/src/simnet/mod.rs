//! Deterministic discrete-event simulator.
//!
//! Virtual time is exact rational arithmetic; only model parameters use
//! floating point. Events execute in (time, insertion-sequence) order, so a
//! (config, seed) pair fully determines the trace. Message delivery applies
//! a seeded latency model and per-link FIFO: a later send on the same link
//! never overtakes an earlier one, matching what a stream transport would
//! provide.

mod latency;
mod traffic;

pub use latency::LatencyModel;
pub use traffic::{KindStats, TrafficCounter, TrafficSnapshot};

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use crate::error::{Error, Result};
use crate::rat::{rat_int, Rat};
use crate::DeviceId;

/// Monotonic virtual clock; advances only by event processing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VirtualClock {
    now: Rat,
}

impl VirtualClock {
    pub fn new() -> Self {
        VirtualClock { now: rat_int(0) }
    }

    pub fn now(&self) -> Rat {
        self.now
    }

    fn advance_to(&mut self, t: Rat) {
        debug_assert!(t >= self.now, "clock moved backwards");
        self.now = t;
    }
}

impl Default for VirtualClock {
    fn default() -> Self {
        Self::new()
    }
}

/// Time-ordered event queue with deterministic tie-breaking by insertion
/// sequence.
pub struct EventQueue<E> {
    heap: BinaryHeap<Reverse<(Rat, u64)>>,
    payloads: BTreeMap<u64, E>,
    seq: u64,
    clock: VirtualClock,
}

impl<E> EventQueue<E> {
    pub fn new() -> Self {
        EventQueue {
            heap: BinaryHeap::new(),
            payloads: BTreeMap::new(),
            seq: 0,
            clock: VirtualClock::new(),
        }
    }

    pub fn now(&self) -> Rat {
        self.clock.now()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    /// Schedules an event; scheduling in the past is rejected.
    pub fn schedule(&mut self, at: Rat, event: E) -> Result<()> {
        if at < self.clock.now() {
            return Err(Error::invalid(
                "at",
                format!("cannot schedule at {at} before now {}", self.clock.now()),
            ));
        }
        let seq = self.seq;
        self.seq += 1;
        self.heap.push(Reverse((at, seq)));
        self.payloads.insert(seq, event);
        Ok(())
    }

    /// Pops the next event, advancing the clock to its timestamp.
    pub fn pop(&mut self) -> Option<(Rat, E)> {
        let Reverse((t, seq)) = self.heap.pop()?;
        self.clock.advance_to(t);
        let ev = self
            .payloads
            .remove(&seq)
            .expect("payload for scheduled event");
        Some((t, ev))
    }
}

impl<E> Default for EventQueue<E> {
    fn default() -> Self {
        Self::new()
    }
}

/// One scripted connectivity change.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FailureEvent {
    pub device: DeviceId,
    pub disconnect_at: Rat,
    pub reconnect_at: Option<Rat>,
}

/// Scripted disconnects and reconnects, validated and time-ordered.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FailureScript {
    events: Vec<FailureEvent>,
}

impl FailureScript {
    pub fn new(mut events: Vec<FailureEvent>) -> Result<Self> {
        for e in &events {
            if let Some(r) = e.reconnect_at {
                if r <= e.disconnect_at {
                    return Err(Error::invalid(
                        "failure script",
                        format!(
                            "device {} reconnects at {r} before disconnect {}",
                            e.device, e.disconnect_at
                        ),
                    ));
                }
            }
        }
        events.sort_by_key(|e| e.disconnect_at);
        Ok(FailureScript { events })
    }

    pub fn events(&self) -> &[FailureEvent] {
        &self.events
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

/// Per-link FIFO tails: delivery timestamps on one link never decrease.
#[derive(Debug, Default)]
pub struct LinkFifo {
    tails: BTreeMap<(DeviceId, DeviceId), Rat>,
}

impl LinkFifo {
    pub fn new() -> Self {
        LinkFifo::default()
    }

    /// Returns the in-order delivery time for a message on `(from, to)`
    /// whose raw modeled arrival is `arrival`.
    pub fn enforce(&mut self, from: DeviceId, to: DeviceId, arrival: Rat) -> Rat {
        let tail = self.tails.entry((from, to)).or_insert(arrival);
        if arrival > *tail {
            *tail = arrival;
        }
        *tail
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rat::rat;

    #[test]
    fn events_run_in_time_then_insertion_order() {
        let mut q: EventQueue<u32> = EventQueue::new();
        q.schedule(rat_int(2), 20).unwrap();
        q.schedule(rat_int(1), 10).unwrap();
        q.schedule(rat_int(1), 11).unwrap();
        q.schedule(rat(3, 2), 15).unwrap();
        let order: Vec<u32> = std::iter::from_fn(|| q.pop().map(|(_, e)| e)).collect();
        assert_eq!(order, vec![10, 11, 15, 20]);
    }

    #[test]
    fn scheduling_in_the_past_rejected() {
        let mut q: EventQueue<u32> = EventQueue::new();
        q.schedule(rat_int(5), 1).unwrap();
        q.pop();
        assert!(q.schedule(rat_int(4), 2).is_err());
        assert!(q.schedule(rat_int(5), 3).is_ok());
    }

    #[test]
    fn empty_queue_returns_none() {
        let mut q: EventQueue<u32> = EventQueue::new();
        assert!(q.pop().is_none());
        assert_eq!(q.now(), rat_int(0));
    }

    #[test]
    fn clock_is_monotone() {
        let mut q: EventQueue<u32> = EventQueue::new();
        q.schedule(rat(1, 3), 0).unwrap();
        q.schedule(rat(2, 3), 1).unwrap();
        let mut last = rat_int(0);
        while let Some((t, _)) = q.pop() {
            assert!(t >= last);
            last = t;
        }
    }

    #[test]
    fn fifo_orders_per_link() {
        let mut fifo = LinkFifo::new();
        let t1 = fifo.enforce(1, 2, rat_int(5));
        let t2 = fifo.enforce(1, 2, rat_int(3)); // would overtake; pushed back
        let t3 = fifo.enforce(2, 1, rat_int(1)); // different link unaffected
        assert_eq!(t1, rat_int(5));
        assert_eq!(t2, rat_int(5));
        assert_eq!(t3, rat_int(1));
    }

    #[test]
    fn failure_script_validation() {
        assert!(FailureScript::new(vec![FailureEvent {
            device: 0,
            disconnect_at: rat_int(5),
            reconnect_at: Some(rat_int(4)),
        }])
        .is_err());
        let s = FailureScript::new(vec![
            FailureEvent {
                device: 1,
                disconnect_at: rat_int(7),
                reconnect_at: None,
            },
            FailureEvent {
                device: 0,
                disconnect_at: rat_int(2),
                reconnect_at: Some(rat_int(9)),
            },
        ])
        .unwrap();
        assert_eq!(s.events()[0].device, 0);
    }
}
