//! Decentralized partial synchronization: wire format, aggregation math and
//! the fault-tolerant ring session.

mod aggregate;
mod session;
mod wire;

pub use aggregate::{integrate_received, partial_aggregate};
pub use session::{
    run_scatter_gather, DriverReport, MemberEvent, MemberOutput, Phase, PeerStatus, RingMember,
    SessionDriver, TimerKind,
};
pub use wire::{
    segment_bounds, MessageKind, Payload, PeerMessage, Segment, WarnPhase, HEADER_LEN,
};
