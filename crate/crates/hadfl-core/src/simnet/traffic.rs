//! Byte-level traffic accounting, split by message kind, link and device.

use std::collections::BTreeMap;

use crate::gossip::MessageKind;
use crate::DeviceId;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct KindStats {
    pub messages: u64,
    pub bytes: u64,
}

impl KindStats {
    fn add(&mut self, bytes: u64) {
        self.messages += 1;
        self.bytes += bytes;
    }
}

/// Monotone tallies of everything put on the simulated network.
#[derive(Debug, Clone, Default)]
pub struct TrafficCounter {
    sent_by_kind: BTreeMap<MessageKind, KindStats>,
    delivered_by_kind: BTreeMap<MessageKind, KindStats>,
    dropped_by_kind: BTreeMap<MessageKind, KindStats>,
    per_link: BTreeMap<(DeviceId, DeviceId), KindStats>,
    sent_by_device: BTreeMap<DeviceId, KindStats>,
    received_by_device: BTreeMap<DeviceId, KindStats>,
}

impl TrafficCounter {
    pub fn new() -> Self {
        TrafficCounter::default()
    }

    pub fn record_sent(&mut self, from: DeviceId, to: DeviceId, kind: MessageKind, bytes: u64) {
        self.sent_by_kind.entry(kind).or_default().add(bytes);
        self.per_link.entry((from, to)).or_default().add(bytes);
        self.sent_by_device.entry(from).or_default().add(bytes);
    }

    pub fn record_delivered(&mut self, to: DeviceId, kind: MessageKind, bytes: u64) {
        self.delivered_by_kind.entry(kind).or_default().add(bytes);
        self.received_by_device.entry(to).or_default().add(bytes);
    }

    pub fn record_dropped(&mut self, kind: MessageKind, bytes: u64) {
        self.dropped_by_kind.entry(kind).or_default().add(bytes);
    }

    pub fn snapshot(&self) -> TrafficSnapshot {
        TrafficSnapshot {
            sent_by_kind: self.sent_by_kind.clone(),
            delivered_by_kind: self.delivered_by_kind.clone(),
            dropped_by_kind: self.dropped_by_kind.clone(),
            per_link: self.per_link.clone(),
            sent_by_device: self.sent_by_device.clone(),
            received_by_device: self.received_by_device.clone(),
        }
    }
}

/// Immutable view of the counters at one instant.
#[derive(Debug, Clone, Default)]
pub struct TrafficSnapshot {
    pub sent_by_kind: BTreeMap<MessageKind, KindStats>,
    pub delivered_by_kind: BTreeMap<MessageKind, KindStats>,
    pub dropped_by_kind: BTreeMap<MessageKind, KindStats>,
    pub per_link: BTreeMap<(DeviceId, DeviceId), KindStats>,
    pub sent_by_device: BTreeMap<DeviceId, KindStats>,
    pub received_by_device: BTreeMap<DeviceId, KindStats>,
}

impl TrafficSnapshot {
    pub fn sent(&self, kind: MessageKind) -> KindStats {
        self.sent_by_kind.get(&kind).copied().unwrap_or_default()
    }

    pub fn total_sent_bytes(&self) -> u64 {
        self.sent_by_kind.values().map(|s| s.bytes).sum()
    }

    pub fn total_delivered_bytes(&self) -> u64 {
        self.delivered_by_kind.values().map(|s| s.bytes).sum()
    }

    pub fn total_dropped_bytes(&self) -> u64 {
        self.dropped_by_kind.values().map(|s| s.bytes).sum()
    }

    /// Difference of two snapshots taken from the same counter; used for
    /// per-round reporting.
    pub fn delta_since(&self, earlier: &TrafficSnapshot) -> TrafficSnapshot {
        fn diff_map<K: Ord + Clone>(
            now: &BTreeMap<K, KindStats>,
            then: &BTreeMap<K, KindStats>,
        ) -> BTreeMap<K, KindStats> {
            now.iter()
                .map(|(k, s)| {
                    let old = then.get(k).copied().unwrap_or_default();
                    (
                        k.clone(),
                        KindStats {
                            messages: s.messages - old.messages,
                            bytes: s.bytes - old.bytes,
                        },
                    )
                })
                .filter(|(_, s)| s.messages > 0 || s.bytes > 0)
                .collect()
        }
        TrafficSnapshot {
            sent_by_kind: diff_map(&self.sent_by_kind, &earlier.sent_by_kind),
            delivered_by_kind: diff_map(&self.delivered_by_kind, &earlier.delivered_by_kind),
            dropped_by_kind: diff_map(&self.dropped_by_kind, &earlier.dropped_by_kind),
            per_link: diff_map(&self.per_link, &earlier.per_link),
            sent_by_device: diff_map(&self.sent_by_device, &earlier.sent_by_device),
            received_by_device: diff_map(&self.received_by_device, &earlier.received_by_device),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conservation_sent_equals_delivered_plus_dropped() {
        let mut c = TrafficCounter::new();
        c.record_sent(0, 1, MessageKind::Segment, 100);
        c.record_delivered(1, MessageKind::Segment, 100);
        c.record_sent(0, 2, MessageKind::Segment, 50);
        c.record_dropped(MessageKind::Segment, 50);
        let s = c.snapshot();
        assert_eq!(
            s.total_sent_bytes(),
            s.total_delivered_bytes() + s.total_dropped_bytes()
        );
    }

    #[test]
    fn empty_run_is_all_zeros() {
        let s = TrafficCounter::new().snapshot();
        assert_eq!(s.total_sent_bytes(), 0);
        assert!(s.per_link.is_empty());
    }

    #[test]
    fn delta_reports_only_changes() {
        let mut c = TrafficCounter::new();
        c.record_sent(0, 1, MessageKind::Heartbeat, 13);
        let before = c.snapshot();
        c.record_sent(0, 1, MessageKind::Segment, 40);
        c.record_sent(0, 1, MessageKind::Heartbeat, 13);
        let after = c.snapshot();
        let d = after.delta_since(&before);
        assert_eq!(d.sent(MessageKind::Segment).bytes, 40);
        assert_eq!(d.sent(MessageKind::Heartbeat).messages, 1);
        assert_eq!(d.per_link[&(0, 1)].messages, 2);
    }
}
