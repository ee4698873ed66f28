//! Peer message wire encoding.
//!
//! Fixed header, little-endian throughout:
//!
//! ```text
//! kind: u8 | sender: u32 | sync_round: u32 | payload_len: u32 | payload
//! ```
//!
//! Segment payload: `index: u32 | offset: u32 | count: u32 | count x f64`.
//! Model-broadcast payload: `version: u64 | dim: u32 | dim x f64`.
//! Bypass-warning payload:
//! `suspect: u32 | death_phase: u8 | death_step: u32 | detector: u32 |
//! req_phase: u8 | req_step: u32`. The first four fields are the death
//! record: the detector's receive step at detection time pins down exactly
//! which of the dead peer's sends escaped into the ring before it died.
//! The last two carry the sender's own stalled receive position, which the
//! predecessor uses as the re-serve window.
//! Handshake, handshake-ack and heartbeat carry no payload.

use crate::error::{Error, Result};
use crate::model::ParamVector;
use crate::DeviceId;

pub const HEADER_LEN: usize = 13;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum MessageKind {
    Segment = 0,
    Handshake = 1,
    HandshakeAck = 2,
    BypassWarning = 3,
    ModelBroadcast = 4,
    Heartbeat = 5,
}

impl MessageKind {
    pub fn from_byte(b: u8) -> Result<Self> {
        Ok(match b {
            0 => MessageKind::Segment,
            1 => MessageKind::Handshake,
            2 => MessageKind::HandshakeAck,
            3 => MessageKind::BypassWarning,
            4 => MessageKind::ModelBroadcast,
            5 => MessageKind::Heartbeat,
            _ => return Err(Error::Protocol(format!("unknown message kind {b}"))),
        })
    }

    pub const ALL: [MessageKind; 6] = [
        MessageKind::Segment,
        MessageKind::Handshake,
        MessageKind::HandshakeAck,
        MessageKind::BypassWarning,
        MessageKind::ModelBroadcast,
        MessageKind::Heartbeat,
    ];

    pub fn label(self) -> &'static str {
        match self {
            MessageKind::Segment => "segment",
            MessageKind::Handshake => "handshake",
            MessageKind::HandshakeAck => "handshake-ack",
            MessageKind::BypassWarning => "bypass-warning",
            MessageKind::ModelBroadcast => "model-broadcast",
            MessageKind::Heartbeat => "heartbeat",
        }
    }
}

/// Phase tag carried by bypass warnings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WarnPhase {
    Scatter = 0,
    Gather = 1,
}

/// One contiguous slice of a parameter vector in flight.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub index: u32,
    /// Element offset of this slice within the full vector.
    pub offset: u32,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Segment(Segment),
    Handshake,
    HandshakeAck,
    BypassWarning {
        suspect: DeviceId,
        death_phase: WarnPhase,
        death_step: u32,
        detector: DeviceId,
        req_phase: WarnPhase,
        req_step: u32,
    },
    ModelBroadcast {
        version: u64,
        params: ParamVector,
    },
    Heartbeat,
}

impl Payload {
    pub fn kind(&self) -> MessageKind {
        match self {
            Payload::Segment(_) => MessageKind::Segment,
            Payload::Handshake => MessageKind::Handshake,
            Payload::HandshakeAck => MessageKind::HandshakeAck,
            Payload::BypassWarning { .. } => MessageKind::BypassWarning,
            Payload::ModelBroadcast { .. } => MessageKind::ModelBroadcast,
            Payload::Heartbeat => MessageKind::Heartbeat,
        }
    }

    pub fn payload_len(&self) -> usize {
        match self {
            Payload::Segment(s) => 12 + 8 * s.values.len(),
            Payload::Handshake | Payload::HandshakeAck | Payload::Heartbeat => 0,
            Payload::BypassWarning { .. } => 18,
            Payload::ModelBroadcast { params, .. } => 12 + 8 * params.dim(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeerMessage {
    pub sender: DeviceId,
    pub sync_round: u32,
    pub payload: Payload,
}

impl PeerMessage {
    pub fn kind(&self) -> MessageKind {
        self.payload.kind()
    }

    /// Total bytes on the wire. Traffic accounting uses this without
    /// serializing.
    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + self.payload.payload_len()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.push(self.kind() as u8);
        out.extend_from_slice(&self.sender.to_le_bytes());
        out.extend_from_slice(&self.sync_round.to_le_bytes());
        out.extend_from_slice(&(self.payload.payload_len() as u32).to_le_bytes());
        match &self.payload {
            Payload::Segment(s) => {
                out.extend_from_slice(&s.index.to_le_bytes());
                out.extend_from_slice(&s.offset.to_le_bytes());
                out.extend_from_slice(&(s.values.len() as u32).to_le_bytes());
                for v in &s.values {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            Payload::Handshake | Payload::HandshakeAck | Payload::Heartbeat => {}
            Payload::BypassWarning {
                suspect,
                death_phase,
                death_step,
                detector,
                req_phase,
                req_step,
            } => {
                out.extend_from_slice(&suspect.to_le_bytes());
                out.push(*death_phase as u8);
                out.extend_from_slice(&death_step.to_le_bytes());
                out.extend_from_slice(&detector.to_le_bytes());
                out.push(*req_phase as u8);
                out.extend_from_slice(&req_step.to_le_bytes());
            }
            Payload::ModelBroadcast { version, params } => {
                out.extend_from_slice(&version.to_le_bytes());
                out.extend_from_slice(&(params.dim() as u32).to_le_bytes());
                for v in params.as_slice() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        debug_assert_eq!(out.len(), self.encoded_len());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<PeerMessage> {
        let mut r = Reader::new(bytes);
        let kind = MessageKind::from_byte(r.u8()?)?;
        let sender = r.u32()?;
        let sync_round = r.u32()?;
        let payload_len = r.u32()? as usize;
        if r.remaining() != payload_len {
            return Err(Error::Protocol(format!(
                "payload length {payload_len} does not match remaining {}",
                r.remaining()
            )));
        }
        let payload = match kind {
            MessageKind::Segment => {
                let index = r.u32()?;
                let offset = r.u32()?;
                let count = r.u32()? as usize;
                let mut values = Vec::with_capacity(count);
                for _ in 0..count {
                    values.push(r.f64()?);
                }
                Payload::Segment(Segment {
                    index,
                    offset,
                    values,
                })
            }
            MessageKind::Handshake => Payload::Handshake,
            MessageKind::HandshakeAck => Payload::HandshakeAck,
            MessageKind::BypassWarning => {
                let suspect = r.u32()?;
                let death_phase = warn_phase(r.u8()?)?;
                let death_step = r.u32()?;
                let detector = r.u32()?;
                let req_phase = warn_phase(r.u8()?)?;
                let req_step = r.u32()?;
                Payload::BypassWarning {
                    suspect,
                    death_phase,
                    death_step,
                    detector,
                    req_phase,
                    req_step,
                }
            }
            MessageKind::ModelBroadcast => {
                let version = r.u64()?;
                let dim = r.u32()? as usize;
                let mut values = Vec::with_capacity(dim);
                for _ in 0..dim {
                    values.push(r.f64()?);
                }
                Payload::ModelBroadcast {
                    version,
                    params: ParamVector::from_values(values)?,
                }
            }
            MessageKind::Heartbeat => Payload::Heartbeat,
        };
        if r.remaining() != 0 {
            return Err(Error::Protocol("trailing bytes".into()));
        }
        Ok(PeerMessage {
            sender,
            sync_round,
            payload,
        })
    }
}

fn warn_phase(b: u8) -> Result<WarnPhase> {
    match b {
        0 => Ok(WarnPhase::Scatter),
        1 => Ok(WarnPhase::Gather),
        _ => Err(Error::Protocol(format!("bad warn phase {b}"))),
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Protocol("truncated message".into()));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Near-equal contiguous segment boundaries: `(offset, len)` per segment.
/// The remainder spreads over the first `dim % s` segments; concatenating
/// all segments reconstructs the full vector.
pub fn segment_bounds(dim: usize, s: usize) -> Vec<(usize, usize)> {
    assert!(s >= 1);
    let base = dim / s;
    let extra = dim % s;
    let mut out = Vec::with_capacity(s);
    let mut offset = 0;
    for i in 0..s {
        let len = base + usize::from(i < extra);
        out.push((offset, len));
        offset += len;
    }
    out
}
