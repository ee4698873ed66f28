//! Segmented scatter-gather ring aggregation with bypass fault tolerance.
//!
//! Every selected device runs a [`RingMember`] state machine. The vector is
//! split into one segment per member. In the scatter phase each member
//! forwards a partial sum one hop per step; after `n - 1` steps the member
//! at position `p` holds the complete sum of segment `p + 1`, divides it by
//! its contributor count, and the gather phase circulates the finished mean
//! segments around the ring. Failure-free, every member ends with the
//! identical mean vector after `2 * n * (n - 1)` segment messages.
//!
//! Fault handling follows a handshake/bypass scheme. A member that stops
//! hearing from its predecessor first handshakes it; with no ack it warns
//! the dead peer's predecessor, which re-links around the gap and re-serves
//! from its retained state (a member's accumulated value for a segment
//! never changes after it forwards it, so a re-served copy is exactly the
//! chain sum minus the dead peer's folds). Warnings carry a death record —
//! the detector and the receive step where it stalled — which pins down
//! exactly which of the dead peer's sends escaped into the ring, so every
//! member can normalize each segment by its true contributor count, and a
//! proxy never concocts a second copy of a mean segment that is already
//! circulating. Death knowledge always travels the same FIFO links as the
//! data, ahead of any value it describes: re-links flush the full record
//! both ways before data resumes. Segments whose entire upstream chain died
//! are restarted locally; mean segments whose finalizer died before
//! emitting them are rebuilt once, by the last live holder of the partial
//! sum, when the stalled downstream member pulls for them. A peer that
//! fails before contributing anything simply drops out of the average.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::error::{Error, Result};
use crate::gossip::wire::{segment_bounds, Payload, PeerMessage, Segment, WarnPhase};
use crate::model::ParamVector;
use crate::select::RingTopology;
use crate::DeviceId;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Scatter,
    Gather,
    Done,
    Aborted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PeerStatus {
    Alive,
    Suspected,
    Bypassed,
}

/// What is known about one dead peer: the phase and receive step at which
/// its downstream detector stalled. Everything the dead peer sent before
/// that point escaped into the ring; nothing after did.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DeathInfo {
    pub phase: WarnPhase,
    pub sigma: u32,
    /// Ring position of the stalled detector.
    pub detector: usize,
}

/// Timer the driver must arm on the member's behalf. Generations let stale
/// timers fire harmlessly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimerKind {
    /// Predecessor silence watchdog.
    Wait,
    /// Handshake-ack deadline.
    Handshake,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MemberEvent {
    Start,
    Deliver(PeerMessage),
    Timeout { kind: TimerKind, generation: u64 },
}

#[derive(Debug, Default)]
pub struct MemberOutput {
    pub sends: Vec<(DeviceId, PeerMessage)>,
    pub arm_wait: Option<u64>,
    pub arm_handshake: Option<u64>,
    /// Set once when the gather phase completes.
    pub completed: Option<ParamVector>,
    /// Set once if the live ring shrank below two members.
    pub aborted: bool,
}

/// One selected device's view of a partial-synchronization session.
#[derive(Debug, Clone)]
pub struct RingMember {
    me: DeviceId,
    ring: RingTopology,
    pos: usize,
    n: usize,
    sync_round: u32,
    bounds: Vec<(usize, usize)>,
    /// Scatter accumulators, one slice per segment. `acc[j]` is stable once
    /// this member has forwarded segment `j`.
    acc: Vec<Vec<f64>>,
    /// Ring positions whose values are folded into `acc[j]`.
    contrib: Vec<BTreeSet<usize>>,
    /// Finished mean segments circulating in the gather phase.
    finalized: Vec<Option<Vec<f64>>>,
    phase: Phase,
    s_recv: usize,
    s_sent: usize,
    g_recv: usize,
    g_sent: usize,
    received_scatter: BTreeSet<usize>,
    received_gather: BTreeSet<usize>,
    pending_scatter: BTreeMap<usize, Vec<f64>>,
    pending_gather: BTreeMap<usize, Vec<f64>>,
    /// Mean segments this member rebuilt on behalf of a dead finalizer.
    injected: BTreeSet<usize>,
    /// Ring positions known to be dead, with their death records.
    bypassed: BTreeMap<usize, DeathInfo>,
    pred: usize,
    succ: usize,
    suspect: Option<usize>,
    wait_gen: u64,
    wait_armed: bool,
    /// Stall position the live wait timer covers.
    wait_state: (u8, usize),
    last_pull: Option<(u8, usize)>,
    hs_gen: u64,
    /// Segments already re-served per downstream target, one set per
    /// phase: a segment is re-served at most once, so overlapping duty
    /// windows cannot duplicate traffic.
    served_scatter: BTreeMap<usize, BTreeSet<usize>>,
    served_gather: BTreeMap<usize, BTreeSet<usize>>,
    /// Duty scans deferred until the local scatter completes.
    pending_duties: Vec<(usize, WarnPhase, u32)>,
    peer_status: BTreeMap<DeviceId, PeerStatus>,
}

/// Death-record fields as they appear on the wire.
struct DeathWire {
    death_phase: WarnPhase,
    death_step: u32,
    detector: DeviceId,
}

impl RingMember {
    pub fn new(
        me: DeviceId,
        ring: RingTopology,
        params: &ParamVector,
        sync_round: u32,
    ) -> Result<Self> {
        let pos = ring
            .position(me)
            .ok_or_else(|| Error::Protocol(format!("device {me} not in ring")))?;
        let n = ring.len();
        let bounds = segment_bounds(params.dim(), n);
        let acc: Vec<Vec<f64>> = bounds
            .iter()
            .map(|&(off, len)| params.as_slice()[off..off + len].to_vec())
            .collect();
        let contrib = (0..n).map(|_| BTreeSet::from([pos])).collect();
        let peer_status = ring
            .order()
            .iter()
            .filter(|&&d| d != me)
            .map(|&d| (d, PeerStatus::Alive))
            .collect();
        Ok(RingMember {
            me,
            pos,
            n,
            sync_round,
            bounds,
            acc,
            contrib,
            finalized: vec![None; n],
            phase: Phase::Scatter,
            s_recv: 0,
            s_sent: 0,
            g_recv: 0,
            g_sent: 0,
            received_scatter: BTreeSet::new(),
            received_gather: BTreeSet::new(),
            pending_scatter: BTreeMap::new(),
            pending_gather: BTreeMap::new(),
            injected: BTreeSet::new(),
            bypassed: BTreeMap::new(),
            pred: (pos + n - 1) % n,
            succ: (pos + 1) % n,
            suspect: None,
            wait_gen: 0,
            wait_armed: false,
            wait_state: (0, 0),
            last_pull: None,
            hs_gen: 0,
            served_scatter: BTreeMap::new(),
            served_gather: BTreeMap::new(),
            pending_duties: Vec::new(),
            peer_status,
            ring,
        })
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn device(&self) -> DeviceId {
        self.me
    }

    pub fn peer_status(&self) -> &BTreeMap<DeviceId, PeerStatus> {
        &self.peer_status
    }

    /// Participation flags: true for every member not bypassed.
    pub fn contribution_flags(&self) -> BTreeMap<DeviceId, bool> {
        self.ring
            .order()
            .iter()
            .enumerate()
            .map(|(p, &d)| (d, !self.bypassed.contains_key(&p)))
            .collect()
    }

    fn id_at(&self, pos: usize) -> DeviceId {
        self.ring.order()[pos]
    }

    fn pos_of(&self, id: DeviceId) -> Option<usize> {
        self.ring.position(id)
    }

    fn wrap(&self, x: usize) -> usize {
        x % self.n
    }

    /// Segment this member forwards at scatter step `s`.
    fn scatter_send_seg(&self, s: usize) -> usize {
        self.wrap(self.pos + self.n - s)
    }

    /// Segment expected from the predecessor at scatter step `s`.
    fn scatter_recv_seg(&self, s: usize) -> usize {
        self.wrap(self.pos + self.n - 1 - s)
    }

    fn gather_send_seg(&self, s: usize) -> usize {
        self.wrap(self.pos + 1 + self.n - s)
    }

    fn gather_recv_seg(&self, s: usize) -> usize {
        self.wrap(self.pos + self.n - s)
    }

    fn own_finalized_seg(&self) -> usize {
        self.wrap(self.pos + 1)
    }

    /// First live position walking backwards from `from` (inclusive).
    fn first_alive_back(&self, mut from: usize) -> usize {
        while self.bypassed.contains_key(&from) {
            from = self.wrap(from + self.n - 1);
        }
        from
    }

    fn first_alive_fwd(&self, mut from: usize) -> usize {
        while self.bypassed.contains_key(&from) {
            from = self.wrap(from + 1);
        }
        from
    }

    fn alive_count(&self) -> usize {
        self.n - self.bypassed.len()
    }

    /// Whether a dead peer's scatter fold of `seg` escaped into the ring:
    /// either it was detected only in the gather phase (all its scatter
    /// sends had been consumed) or its detector had already received this
    /// segment when it stalled.
    fn scatter_fold_escaped(&self, info: &DeathInfo, seg: usize) -> bool {
        match info.phase {
            WarnPhase::Gather => true,
            WarnPhase::Scatter => {
                let step_at_detector = self.wrap(info.detector + 2 * self.n - 1 - seg);
                step_at_detector < info.sigma as usize
            }
        }
    }

    /// Scatter chain for the value expected at step `s` of position
    /// `target`: the original positions from the segment's origin through
    /// the target's predecessor.
    fn chain_positions(&self, target: usize, s: usize) -> Vec<usize> {
        (0..=s)
            .map(|i| self.wrap(target + 2 * self.n - 1 - s + i))
            .collect()
    }

    fn msg(&self, payload: Payload) -> PeerMessage {
        PeerMessage {
            sender: self.me,
            sync_round: self.sync_round,
            payload,
        }
    }

    fn warning(&self, suspect_pos: usize, info: DeathInfo) -> Payload {
        Payload::BypassWarning {
            suspect: self.id_at(suspect_pos),
            death_phase: info.phase,
            death_step: info.sigma,
            detector: self.id_at(info.detector),
            req_phase: self.req_phase(),
            req_step: self.stalled_step() as u32,
        }
    }

    fn req_phase(&self) -> WarnPhase {
        match self.phase {
            Phase::Gather | Phase::Done => WarnPhase::Gather,
            _ => WarnPhase::Scatter,
        }
    }

    fn stalled_step(&self) -> usize {
        match self.phase {
            Phase::Scatter => self.s_recv,
            Phase::Gather => self.g_recv,
            Phase::Done => self.n - 1,
            Phase::Aborted => 0,
        }
    }

    fn send_segment(&self, out: &mut MemberOutput, to_pos: usize, index: usize, values: Vec<f64>) {
        let (offset, _) = self.bounds[index];
        out.sends.push((
            self.id_at(to_pos),
            self.msg(Payload::Segment(Segment {
                index: index as u32,
                offset: offset as u32,
                values,
            })),
        ));
    }

    /// Whether the normal scatter send at step `s` still serves the current
    /// successor. After a re-link the tail of the schedule addressed the
    /// dead stretch only: the successor's fold chains for those steps do
    /// not run through this member.
    fn scatter_send_in_window(&self, s: usize) -> bool {
        let d = self.wrap(self.succ + self.n - self.pos);
        s + d < self.n
    }

    fn waiting_for_receive(&self) -> bool {
        match self.phase {
            Phase::Scatter => self.s_recv < self.n - 1,
            Phase::Gather => self.g_recv < self.n - 1,
            _ => false,
        }
    }

    /// Arms the predecessor watchdog. Without `force`, an already-armed
    /// timer covering the same stall position is left alone so that
    /// bystander traffic cannot starve the watchdog.
    fn bump_wait_inner(&mut self, force: bool, out: &mut MemberOutput) {
        if !self.waiting_for_receive() {
            return;
        }
        let state = (self.req_phase() as u8, self.stalled_step());
        if !force && self.wait_armed && self.wait_state == state {
            return;
        }
        self.wait_gen += 1;
        self.wait_armed = true;
        self.wait_state = state;
        out.arm_wait = Some(self.wait_gen);
    }

    fn bump_wait(&mut self, out: &mut MemberOutput) {
        self.bump_wait_inner(false, out);
    }

    /// Drives every event. Returns the messages to send and timers to arm.
    pub fn handle(&mut self, event: MemberEvent) -> MemberOutput {
        let mut out = MemberOutput::default();
        if self.phase == Phase::Aborted {
            return out;
        }
        if self.phase == Phase::Done {
            // a finished member stays reachable: it acknowledges handshakes
            // and re-serves finished segments for slower peers
            if let MemberEvent::Deliver(msg) = event {
                match msg.payload {
                    Payload::Handshake => {
                        out.sends.push((msg.sender, self.msg(Payload::HandshakeAck)));
                    }
                    Payload::BypassWarning {
                        suspect,
                        death_phase,
                        death_step,
                        detector,
                        req_phase,
                        req_step,
                    } => {
                        if let Some(sender_pos) = self.pos_of(msg.sender) {
                            let death = DeathWire {
                                death_phase,
                                death_step,
                                detector,
                            };
                            self.on_warning(sender_pos, suspect, death, req_phase, req_step, &mut out);
                        }
                    }
                    _ => {}
                }
            }
            return out;
        }
        match event {
            MemberEvent::Start => {
                let seg = self.scatter_send_seg(0);
                if self.scatter_send_in_window(0) {
                    self.send_segment(&mut out, self.succ, seg, self.acc[seg].clone());
                    self.served_scatter.entry(self.succ).or_default().insert(seg);
                }
                self.s_sent = 1;
                self.try_advance(&mut out);
                self.bump_wait(&mut out);
            }
            MemberEvent::Deliver(msg) => self.on_message(msg, &mut out),
            MemberEvent::Timeout { kind, generation } => match kind {
                TimerKind::Wait => {
                    if generation == self.wait_gen && self.waiting_for_receive() {
                        self.wait_armed = false;
                        self.suspect = Some(self.pred);
                        let pred_id = self.id_at(self.pred);
                        self.peer_status.insert(pred_id, PeerStatus::Suspected);
                        out.sends.push((pred_id, self.msg(Payload::Handshake)));
                        self.hs_gen += 1;
                        out.arm_handshake = Some(self.hs_gen);
                    }
                }
                TimerKind::Handshake => {
                    if generation == self.hs_gen {
                        if let Some(dead) = self.suspect.take() {
                            let info = DeathInfo {
                                phase: self.req_phase(),
                                sigma: self.stalled_step() as u32,
                                detector: self.pos,
                            };
                            self.on_peer_dead(dead, info, None, &mut out);
                            self.try_advance(&mut out);
                            self.bump_wait(&mut out);
                        }
                    }
                }
            },
        }
        out
    }

    fn on_message(&mut self, msg: PeerMessage, out: &mut MemberOutput) {
        let sender_pos = match self.pos_of(msg.sender) {
            Some(p) => p,
            None => return, // not a ring member; ignore
        };
        match msg.payload {
            Payload::Segment(seg) => {
                // only the current predecessor feeds this member
                if sender_pos != self.pred {
                    return;
                }
                let index = seg.index as usize;
                if index >= self.n || seg.values.len() != self.bounds[index].1 {
                    return;
                }
                // knowledge and re-serves always precede the data they
                // affect on this FIFO link, so the local phase classifies
                // the value
                match self.phase {
                    Phase::Scatter => {
                        if index != self.pos && !self.received_scatter.contains(&index) {
                            self.pending_scatter.entry(index).or_insert(seg.values);
                        }
                    }
                    Phase::Gather => {
                        if index != self.own_finalized_seg()
                            && !self.received_gather.contains(&index)
                        {
                            self.pending_gather.entry(index).or_insert(seg.values);
                        }
                    }
                    _ => return,
                }
                // liveness evidence from the predecessor
                if self.suspect == Some(sender_pos) {
                    self.suspect = None;
                    self.peer_status.insert(msg.sender, PeerStatus::Alive);
                    self.hs_gen += 1;
                }
                self.try_advance(out);
                self.bump_wait(out);
            }
            Payload::Handshake => {
                out.sends.push((msg.sender, self.msg(Payload::HandshakeAck)));
            }
            Payload::HandshakeAck => {
                if self.suspect == Some(sender_pos) {
                    self.suspect = None;
                    self.peer_status.insert(msg.sender, PeerStatus::Alive);
                    self.hs_gen += 1;
                    // alive but silent predecessor: if stalled in gather the
                    // missing value may be gone from circulation, so ask for
                    // a re-serve
                    self.maybe_pull(out);
                    self.bump_wait_inner(true, out);
                }
            }
            Payload::BypassWarning {
                suspect,
                death_phase,
                death_step,
                detector,
                req_phase,
                req_step,
            } => {
                let death = DeathWire {
                    death_phase,
                    death_step,
                    detector,
                };
                self.on_warning(sender_pos, suspect, death, req_phase, req_step, out);
            }
            Payload::ModelBroadcast { .. } | Payload::Heartbeat => {}
        }
    }

    /// Stalled in gather while the predecessor is alive: if any death is
    /// known, request a re-serve window starting at the current stall.
    fn maybe_pull(&mut self, out: &mut MemberOutput) {
        if self.phase != Phase::Gather || !self.waiting_for_receive() || self.bypassed.is_empty()
        {
            return;
        }
        let state = (WarnPhase::Gather as u8, self.g_recv);
        if self.last_pull == Some(state) {
            return;
        }
        self.last_pull = Some(state);
        let seg = self.gather_recv_seg(self.g_recv);
        let finalizer = self.wrap(seg + self.n - 1);
        // prefer the stalled segment's own dead finalizer as the record to
        // carry; any known death keeps the message well-formed otherwise
        let suspect_pos = if self.bypassed.contains_key(&finalizer) {
            finalizer
        } else {
            *self.bypassed.keys().next().unwrap()
        };
        let info = self.bypassed[&suspect_pos];
        let warn = self.warning(suspect_pos, info);
        out.sends.push((self.id_at(self.pred), self.msg(warn)));
    }

    /// Marks a position dead and re-links around it. `skip_forward`
    /// suppresses the ring-forward copy toward the member the knowledge
    /// came from.
    fn on_peer_dead(
        &mut self,
        dead: usize,
        info: DeathInfo,
        skip_forward: Option<usize>,
        out: &mut MemberOutput,
    ) {
        if self.bypassed.contains_key(&dead) || dead == self.pos {
            return;
        }
        self.bypassed.insert(dead, info);
        let dead_id = self.id_at(dead);
        self.peer_status.insert(dead_id, PeerStatus::Bypassed);
        if self.alive_count() < 2 {
            if matches!(self.phase, Phase::Scatter | Phase::Gather) {
                self.phase = Phase::Aborted;
                out.aborted = true;
            }
            return;
        }
        if self.bypassed.contains_key(&self.succ) {
            self.relink_succ(out);
        } else if self.succ != self.pos && Some(self.succ) != skip_forward {
            // knowledge travels the same direction as the data, ahead of
            // any value it affects
            let warn = self.warning(dead, info);
            out.sends.push((self.id_at(self.succ), self.msg(warn)));
        }
        if self.pred == dead {
            self.relink_pred(out);
        }
    }

    /// Walks the successor pointer past dead peers and flushes the full
    /// death record to the new successor before any data flows that way.
    fn relink_succ(&mut self, out: &mut MemberOutput) {
        self.succ = self.first_alive_fwd(self.succ);
        if self.succ == self.pos {
            return;
        }
        let succ_id = self.id_at(self.succ);
        let records: Vec<(usize, DeathInfo)> =
            self.bypassed.iter().map(|(&p, &i)| (p, i)).collect();
        for (p, info) in records {
            let warn = self.warning(p, info);
            out.sends.push((succ_id, self.msg(warn)));
        }
    }

    /// Walks back past the dead stretch and asks the first live predecessor
    /// to take over the dead peers' sending duties. The warning naming the
    /// new predecessor's own successor goes last: by the time it triggers
    /// the duty scan the receiver knows the whole stretch.
    fn relink_pred(&mut self, out: &mut MemberOutput) {
        // stashed values from the dead predecessor are discarded rather
        // than kept: the death record promises that exactly the consumed
        // receives escaped, and the new predecessor re-serves the rest
        self.pending_scatter.clear();
        self.pending_gather.clear();
        let new_pred = self.first_alive_back(self.wrap(self.pred + self.n - 1));
        self.pred = new_pred;
        if new_pred == self.pos {
            return; // only happens en route to abort
        }
        let trigger = self.wrap(new_pred + 1);
        let mut suspects: Vec<(usize, DeathInfo)> =
            self.bypassed.iter().map(|(&p, &i)| (p, i)).collect();
        suspects.sort_unstable_by_key(|&(p, _)| (p == trigger, p));
        let pred_id = self.id_at(new_pred);
        for (p, info) in suspects {
            let warn = self.warning(p, info);
            out.sends.push((pred_id, self.msg(warn)));
        }
        self.suspect = None;
        self.hs_gen += 1;
    }

    fn on_warning(
        &mut self,
        sender_pos: usize,
        suspect: DeviceId,
        death: DeathWire,
        req_phase: WarnPhase,
        req_step: u32,
        out: &mut MemberOutput,
    ) {
        let spos = match self.pos_of(suspect) {
            Some(p) => p,
            None => return,
        };
        let det_pos = match self.pos_of(death.detector) {
            Some(p) => p,
            None => return,
        };
        let info = DeathInfo {
            phase: death.death_phase,
            sigma: death.death_step,
            detector: det_pos,
        };
        self.on_peer_dead(spos, info, Some(sender_pos), out);
        if self.phase == Phase::Aborted {
            return;
        }
        if self.bypassed.contains_key(&self.succ) {
            self.relink_succ(out);
        }
        // a warning from the member directly downstream asks this member to
        // re-serve what the dead stretch swallowed, from its stall onward
        if sender_pos == self.succ {
            self.serve_duty(sender_pos, req_phase, req_step as usize, out);
        }
        self.try_advance(out);
        self.bump_wait(out);
    }

    /// Re-serves the downstream member's remaining receive schedule out of
    /// this member's retained state.
    fn serve_duty(
        &mut self,
        target: usize,
        phase: WarnPhase,
        stalled_step: usize,
        out: &mut MemberOutput,
    ) {
        match phase {
            WarnPhase::Scatter => {
                for s in stalled_step..self.n.saturating_sub(1) {
                    let seg = self.wrap(target + 2 * self.n - 1 - s);
                    let chain = self.chain_positions(target, s);
                    // a value is mine to re-serve exactly when its fold
                    // chain runs through this member; shorter chains lie
                    // wholly inside the dead stretch and the target restarts
                    // them itself. Purely positional, so the server and the
                    // target can never disagree on who serves a step.
                    if !chain.contains(&self.pos) {
                        continue;
                    }
                    if (seg == self.pos || self.received_scatter.contains(&seg))
                        && self.served_scatter.entry(target).or_default().insert(seg)
                    {
                        // folded already; the retained accumulator is
                        // exactly the chain sum minus dead folds. Unfolded
                        // steps follow via the normal self-clock.
                        self.send_segment(out, target, seg, self.acc[seg].clone());
                    }
                }
            }
            WarnPhase::Gather => {
                if self.s_recv < self.n - 1 {
                    // cannot finalize anything yet; retry when scatter ends
                    let duty = (target, WarnPhase::Gather, stalled_step as u32);
                    if !self.pending_duties.contains(&duty) {
                        self.pending_duties.push(duty);
                    }
                    return;
                }
                for s in stalled_step..self.n.saturating_sub(1) {
                    let seg = self.wrap(target + 2 * self.n - s);
                    if let Some(v) = self.finalized[seg].clone() {
                        if self.served_gather.entry(target).or_default().insert(seg) {
                            self.send_segment(out, target, seg, v);
                        }
                    } else if self.inject_eligible(seg)
                        && self.served_gather.entry(target).or_default().insert(seg)
                    {
                        // the target provably lacks this segment (it sits in
                        // its stalled window) and every copy must enter
                        // circulation through the target, so no second copy
                        // can exist: rebuild it here, once
                        let v = self.finalize_segment(seg);
                        self.finalized[seg] = Some(v.clone());
                        self.injected.insert(seg);
                        self.send_segment(out, target, seg, v);
                    }
                }
            }
        }
    }

    /// True when this member is the live holder of the partial sum for a
    /// mean segment whose true finalizer died: every position from the
    /// finalizer back to (but excluding) this member is bypassed.
    fn inject_eligible(&self, seg: usize) -> bool {
        if self.s_recv < self.n - 1 {
            return false;
        }
        let finalizer = self.wrap(seg + self.n - 1);
        finalizer != self.pos
            && self.bypassed.contains_key(&finalizer)
            && self.first_alive_back(finalizer) == self.pos
    }

    /// Divides the accumulated sum by its own contributor count. A fold
    /// that escaped a dead peer stays counted; one that never escaped was
    /// never folded here.
    fn finalize_segment(&self, seg: usize) -> Vec<f64> {
        let divisor = self.contrib[seg]
            .iter()
            .filter(|p| match self.bypassed.get(p) {
                None => true,
                Some(info) => self.scatter_fold_escaped(info, seg),
            })
            .count()
            .max(1) as f64;
        self.acc[seg].iter().map(|v| v / divisor).collect()
    }

    /// Advances through every receive step that is already satisfiable:
    /// stashed values, dead-chain restarts and own injections.
    fn try_advance(&mut self, out: &mut MemberOutput) {
        loop {
            match self.phase {
                Phase::Scatter => {
                    if self.s_recv >= self.n - 1 {
                        break;
                    }
                    let s = self.s_recv;
                    let seg = self.scatter_recv_seg(s);
                    if let Some(values) = self.pending_scatter.remove(&seg) {
                        if !self.received_scatter.contains(&seg) {
                            for (a, v) in self.acc[seg].iter_mut().zip(&values) {
                                *a += v;
                            }
                            let contributors: Vec<usize> = self
                                .chain_positions(self.pos, s)
                                .into_iter()
                                .filter(|p| match self.bypassed.get(p) {
                                    None => true,
                                    Some(info) => self.scatter_fold_escaped(info, seg),
                                })
                                .collect();
                            self.contrib[seg].extend(contributors);
                        }
                        self.advance_scatter(seg, out);
                    } else if self
                        .chain_positions(self.pos, s)
                        .iter()
                        .all(|p| self.bypassed.contains_key(p))
                    {
                        // entire upstream chain is dead: restart the chain
                        // from this member's own slice
                        self.advance_scatter(seg, out);
                    } else {
                        break;
                    }
                }
                Phase::Gather => {
                    if self.g_recv >= self.n - 1 {
                        break;
                    }
                    let seg = self.gather_recv_seg(self.g_recv);
                    if let Some(values) = self.pending_gather.remove(&seg) {
                        if !self.received_gather.contains(&seg) {
                            self.finalized[seg] = Some(values);
                        }
                        self.advance_gather(seg, out);
                    } else if self.injected.contains(&seg) && self.finalized[seg].is_some() {
                        // own injection; the circulating copy is it
                        self.advance_gather(seg, out);
                    } else {
                        break;
                    }
                }
                _ => break,
            }
        }
    }

    fn advance_scatter(&mut self, seg: usize, out: &mut MemberOutput) {
        self.received_scatter.insert(seg);
        self.s_recv += 1;
        // forward what was just folded
        if self.s_recv <= self.n - 2 && self.s_sent == self.s_recv {
            let send_seg = self.scatter_send_seg(self.s_recv);
            if self.scatter_send_in_window(self.s_sent) {
                self.send_segment(out, self.succ, send_seg, self.acc[send_seg].clone());
                self.served_scatter
                    .entry(self.succ)
                    .or_default()
                    .insert(send_seg);
            }
            self.s_sent += 1;
        }
        if self.s_recv == self.n - 1 {
            self.complete_scatter(out);
        }
    }

    fn complete_scatter(&mut self, out: &mut MemberOutput) {
        self.pending_scatter.clear();
        let own = self.own_finalized_seg();
        let v = self.finalize_segment(own);
        self.finalized[own] = Some(v.clone());
        self.phase = Phase::Gather;
        if own != self.wrap(self.succ + 1) {
            self.send_segment(out, self.succ, own, v);
            self.served_gather.entry(self.succ).or_default().insert(own);
        }
        self.g_sent = 1;
        let duties = std::mem::take(&mut self.pending_duties);
        for (target, phase, step) in duties {
            self.serve_duty(target, phase, step as usize, out);
        }
        self.try_advance(out);
    }

    fn advance_gather(&mut self, seg: usize, out: &mut MemberOutput) {
        self.received_gather.insert(seg);
        self.g_recv += 1;
        if self.g_recv <= self.n - 2 && self.g_sent == self.g_recv {
            let send_seg = self.gather_send_seg(self.g_recv);
            if send_seg != self.wrap(self.succ + 1) {
                if let Some(v) = self.finalized[send_seg].clone() {
                    self.send_segment(out, self.succ, send_seg, v);
                    self.served_gather
                        .entry(self.succ)
                        .or_default()
                        .insert(send_seg);
                }
            }
            self.g_sent += 1;
        }
        if self.g_recv == self.n - 1 {
            self.complete_gather(out);
        }
    }

    fn complete_gather(&mut self, out: &mut MemberOutput) {
        let dim = self.bounds.iter().map(|(_, l)| l).sum();
        let mut values = Vec::with_capacity(dim);
        for seg in 0..self.n {
            match &self.finalized[seg] {
                Some(v) => values.extend_from_slice(v),
                None => {
                    self.phase = Phase::Aborted;
                    out.aborted = true;
                    return;
                }
            }
        }
        match ParamVector::from_values(values) {
            Ok(p) => {
                self.phase = Phase::Done;
                out.completed = Some(p);
            }
            Err(_) => {
                self.phase = Phase::Aborted;
                out.aborted = true;
            }
        }
    }
}

/// Outcome of an in-memory session run.
#[derive(Debug)]
pub struct DriverReport {
    pub results: BTreeMap<DeviceId, ParamVector>,
    pub aborted: BTreeSet<DeviceId>,
    pub segment_messages: usize,
    pub total_messages: usize,
}

/// Drives a ring session to completion over an in-memory FIFO queue,
/// without a clock: timers fire (oldest first) whenever no message is in
/// flight. Used by unit tests and oracle suites; the event simulator drives
/// the same state machine in virtual time.
pub struct SessionDriver {
    members: BTreeMap<DeviceId, RingMember>,
    inputs: BTreeMap<DeviceId, ParamVector>,
    dead_at_start: BTreeSet<DeviceId>,
    /// Device dies after emitting this many protocol messages.
    die_after_sends: BTreeMap<DeviceId, usize>,
}

impl SessionDriver {
    pub fn new(ring: &RingTopology, inputs: BTreeMap<DeviceId, ParamVector>) -> Result<Self> {
        let mut members = BTreeMap::new();
        for &id in ring.order() {
            let params = inputs
                .get(&id)
                .ok_or_else(|| Error::Protocol(format!("missing input for device {id}")))?;
            members.insert(id, RingMember::new(id, ring.clone(), params, 0)?);
        }
        Ok(SessionDriver {
            members,
            inputs,
            dead_at_start: BTreeSet::new(),
            die_after_sends: BTreeMap::new(),
        })
    }

    pub fn kill_at_start(mut self, id: DeviceId) -> Self {
        self.dead_at_start.insert(id);
        self
    }

    pub fn kill_after_sends(mut self, id: DeviceId, sends: usize) -> Self {
        self.die_after_sends.insert(id, sends);
        self
    }

    pub fn run(mut self) -> Result<DriverReport> {
        let mut queue: VecDeque<(DeviceId, PeerMessage)> = VecDeque::new();
        let mut timers: VecDeque<(DeviceId, TimerKind, u64)> = VecDeque::new();
        let mut dead = self.dead_at_start.clone();
        let mut sends_made: BTreeMap<DeviceId, usize> = BTreeMap::new();
        let mut results = BTreeMap::new();
        let mut aborted = BTreeSet::new();
        let mut segment_messages = 0usize;
        let mut total_messages = 0usize;

        let ids: Vec<DeviceId> = self.members.keys().copied().collect();
        let mut outputs: Vec<(DeviceId, MemberOutput)> = Vec::new();
        for &id in &ids {
            if dead.contains(&id) {
                continue;
            }
            let out = self.members.get_mut(&id).unwrap().handle(MemberEvent::Start);
            outputs.push((id, out));
        }
        let process_output =
            |id: DeviceId,
             out: MemberOutput,
             queue: &mut VecDeque<(DeviceId, PeerMessage)>,
             timers: &mut VecDeque<(DeviceId, TimerKind, u64)>,
             dead: &mut BTreeSet<DeviceId>,
             sends_made: &mut BTreeMap<DeviceId, usize>,
             results: &mut BTreeMap<DeviceId, ParamVector>,
             aborted: &mut BTreeSet<DeviceId>,
             segment_messages: &mut usize,
             total_messages: &mut usize| {
                let budget = self.die_after_sends.get(&id).copied();
                for (to, msg) in out.sends {
                    let made = sends_made.entry(id).or_insert(0);
                    if let Some(b) = budget {
                        if *made >= b {
                            dead.insert(id);
                            break;
                        }
                    }
                    *made += 1;
                    *total_messages += 1;
                    if matches!(msg.payload, Payload::Segment(_)) {
                        *segment_messages += 1;
                    }
                    queue.push_back((to, msg));
                }
                if let Some(g) = out.arm_wait {
                    timers.push_back((id, TimerKind::Wait, g));
                }
                if let Some(g) = out.arm_handshake {
                    timers.push_back((id, TimerKind::Handshake, g));
                }
                if let Some(p) = out.completed {
                    results.insert(id, p);
                }
                if out.aborted {
                    aborted.insert(id);
                }
            };

        for (id, out) in outputs.drain(..) {
            process_output(
                id,
                out,
                &mut queue,
                &mut timers,
                &mut dead,
                &mut sends_made,
                &mut results,
                &mut aborted,
                &mut segment_messages,
                &mut total_messages,
            );
        }

        let mut steps = 0usize;
        let step_limit = 200_000 + 10_000 * self.members.len();
        loop {
            steps += 1;
            if steps > step_limit {
                return Err(Error::Protocol("session livelock".into()));
            }
            let all_settled = self
                .members
                .iter()
                .all(|(id, m)| {
                    dead.contains(id)
                        || matches!(m.phase(), Phase::Done | Phase::Aborted)
                });
            if all_settled {
                break;
            }
            if let Some((to, msg)) = queue.pop_front() {
                if dead.contains(&to) {
                    continue;
                }
                if let Some(m) = self.members.get_mut(&to) {
                    let out = m.handle(MemberEvent::Deliver(msg));
                    process_output(
                        to,
                        out,
                        &mut queue,
                        &mut timers,
                        &mut dead,
                        &mut sends_made,
                        &mut results,
                        &mut aborted,
                        &mut segment_messages,
                        &mut total_messages,
                    );
                }
                continue;
            }
            if let Some((id, kind, generation)) = timers.pop_front() {
                if dead.contains(&id) {
                    continue;
                }
                if let Some(m) = self.members.get_mut(&id) {
                    let out = m.handle(MemberEvent::Timeout { kind, generation });
                    process_output(
                        id,
                        out,
                        &mut queue,
                        &mut timers,
                        &mut dead,
                        &mut sends_made,
                        &mut results,
                        &mut aborted,
                        &mut segment_messages,
                        &mut total_messages,
                    );
                }
                continue;
            }
            return Err(Error::Protocol("session stuck with no pending events".into()));
        }
        let _ = &self.inputs;
        // a member that completed and then crashed takes its result with it
        results.retain(|id, _| !dead.contains(id));
        aborted.retain(|id| !dead.contains(id));
        Ok(DriverReport {
            results,
            aborted,
            segment_messages,
            total_messages,
        })
    }
}

/// Failure-free scatter-gather over an ad-hoc ring: every member's output is
/// the element-wise mean of the inputs.
pub fn run_scatter_gather(
    ring: &RingTopology,
    inputs: BTreeMap<DeviceId, ParamVector>,
) -> Result<BTreeMap<DeviceId, ParamVector>> {
    let report = SessionDriver::new(ring, inputs)?.run()?;
    if !report.aborted.is_empty() {
        return Err(Error::Protocol("failure-free session aborted".into()));
    }
    Ok(report.results)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ring(ids: &[DeviceId]) -> RingTopology {
        RingTopology::new(ids.to_vec()).unwrap()
    }

    fn inputs(vals: &[(DeviceId, Vec<f64>)]) -> BTreeMap<DeviceId, ParamVector> {
        vals.iter()
            .map(|(id, v)| (*id, ParamVector::from_values(v.clone()).unwrap()))
            .collect()
    }

    fn direct_mean(vecs: &[&ParamVector]) -> Vec<f64> {
        let dim = vecs[0].dim();
        let mut out = vec![0.0; dim];
        for v in vecs {
            for (o, x) in out.iter_mut().zip(v.as_slice()) {
                *o += x;
            }
        }
        for o in &mut out {
            *o /= vecs.len() as f64;
        }
        out
    }

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        for (x, y) in a.iter().zip(b) {
            let rel = (x - y).abs() / x.abs().max(y.abs()).max(1e-12);
            assert!(rel <= tol, "{x} vs {y} (rel {rel})");
        }
    }

    #[test]
    fn two_member_ring_means() {
        let r = ring(&[0, 1]);
        let ins = inputs(&[(0, vec![1.0, 2.0]), (1, vec![3.0, 4.0])]);
        let results = run_scatter_gather(&r, ins).unwrap();
        for v in results.values() {
            assert_eq!(v.as_slice(), &[2.0, 3.0]);
        }
    }

    #[test]
    fn four_member_ring_matches_direct_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let r = ring(&[3, 1, 7, 5]);
        let vecs: Vec<(DeviceId, Vec<f64>)> = [3u32, 1, 7, 5]
            .iter()
            .map(|&id| {
                (
                    id,
                    (0..17).map(|_| rng.gen_range(-5.0..5.0)).collect::<Vec<f64>>(),
                )
            })
            .collect();
        let ins = inputs(&vecs);
        let refs: Vec<&ParamVector> = ins.values().collect();
        let mean = direct_mean(&refs);
        let results = run_scatter_gather(&r, ins.clone()).unwrap();
        assert_eq!(results.len(), 4);
        let first = results.values().next().unwrap().clone();
        for v in results.values() {
            assert_eq!(v, &first, "members must agree bit-identically");
        }
        assert_close(first.as_slice(), &mean, 1e-12);
    }

    #[test]
    fn message_count_law_failure_free() {
        for n in 2..=8usize {
            let ids: Vec<DeviceId> = (0..n as u32).collect();
            let r = ring(&ids);
            let ins: BTreeMap<DeviceId, ParamVector> = ids
                .iter()
                .map(|&id| (id, ParamVector::from_values(vec![id as f64; 12]).unwrap()))
                .collect();
            let report = SessionDriver::new(&r, ins).unwrap().run().unwrap();
            assert_eq!(
                report.segment_messages,
                2 * n * (n - 1),
                "segment messages for n={n}"
            );
            assert_eq!(report.total_messages, report.segment_messages);
        }
    }

    #[test]
    fn result_invariant_under_ring_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let base = [4u32, 0, 2, 9];
        let ins: BTreeMap<DeviceId, ParamVector> = base
            .iter()
            .map(|&id| {
                (
                    id,
                    ParamVector::from_values(
                        (0..33).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                    )
                    .unwrap(),
                )
            })
            .collect();
        let mut outputs = Vec::new();
        for rot in 0..base.len() {
            let order: Vec<DeviceId> =
                (0..base.len()).map(|i| base[(i + rot) % base.len()]).collect();
            let results = run_scatter_gather(&ring(&order), ins.clone()).unwrap();
            outputs.push(results[&0].clone());
        }
        for o in &outputs[1..] {
            assert_close(o.as_slice(), outputs[0].as_slice(), 1e-9);
        }
    }

    #[test]
    fn dim_smaller_than_ring_produces_empty_segments() {
        let r = ring(&[0, 1, 2, 3]);
        let ins = inputs(&[
            (0, vec![4.0]),
            (1, vec![8.0]),
            (2, vec![12.0]),
            (3, vec![16.0]),
        ]);
        let results = run_scatter_gather(&r, ins).unwrap();
        for v in results.values() {
            assert_eq!(v.as_slice(), &[10.0]);
        }
    }

    #[test]
    fn dead_member_before_any_send_yields_survivor_mean() {
        let r = ring(&[0, 1, 2]);
        let ins = inputs(&[
            (0, vec![3.0, 9.0]),
            (1, vec![6.0, 12.0]),
            (2, vec![100.0, 100.0]),
        ]);
        let report = SessionDriver::new(&r, ins).unwrap().kill_at_start(2).run().unwrap();
        assert!(report.aborted.is_empty());
        assert_eq!(report.results.len(), 2);
        for v in report.results.values() {
            assert_close(v.as_slice(), &[4.5, 10.5], 1e-12);
        }
    }

    #[test]
    fn two_simultaneous_failures_in_four_ring() {
        let r = ring(&[0, 1, 2, 3]);
        let ins = inputs(&[
            (0, vec![1.0, 5.0, -2.0]),
            (1, vec![500.0, 500.0, 500.0]),
            (2, vec![900.0, 900.0, 900.0]),
            (3, vec![3.0, 7.0, 4.0]),
        ]);
        let report = SessionDriver::new(&r, ins)
            .unwrap()
            .kill_at_start(1)
            .kill_at_start(2)
            .run()
            .unwrap();
        assert!(report.aborted.is_empty());
        assert_eq!(report.results.len(), 2);
        for v in report.results.values() {
            assert_close(v.as_slice(), &[2.0, 6.0, 1.0], 1e-12);
        }
    }

    #[test]
    fn ring_shrinking_below_two_aborts() {
        let r = ring(&[0, 1, 2]);
        let ins = inputs(&[
            (0, vec![1.0]),
            (1, vec![2.0]),
            (2, vec![3.0]),
        ]);
        let report = SessionDriver::new(&r, ins)
            .unwrap()
            .kill_at_start(1)
            .kill_at_start(2)
            .run()
            .unwrap();
        assert!(report.results.is_empty());
        assert!(report.aborted.contains(&0));
    }

    #[test]
    fn mid_transfer_failure_keeps_consistent_divisors() {
        // kill device 2 after its first k sends, for every k; survivors must
        // agree bit-identically and every segment must equal the mean over a
        // contributor set that includes all survivors
        let ids = [0u32, 1, 2, 3];
        let r = ring(&ids);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ins: BTreeMap<DeviceId, ParamVector> = ids
            .iter()
            .map(|&id| {
                (
                    id,
                    ParamVector::from_values(
                        (0..16).map(|_| rng.gen_range(-4.0..4.0)).collect(),
                    )
                    .unwrap(),
                )
            })
            .collect();
        for k in 0..6 {
            let report = SessionDriver::new(&r, ins.clone())
                .unwrap()
                .kill_after_sends(2, k)
                .run()
                .unwrap();
            assert!(report.aborted.is_empty(), "k={k} aborted");
            assert_eq!(report.results.len(), 3, "k={k}");
            let first = report.results.values().next().unwrap();
            for v in report.results.values() {
                assert_eq!(v, first, "consensus violated at k={k}");
            }
            // segment-wise: value is the mean over survivors or survivors
            // plus the dead peer, depending on how far its folds traveled
            let bounds = segment_bounds(16, 4);
            let survivors: Vec<&ParamVector> =
                [0u32, 1, 3].iter().map(|id| &ins[id]).collect();
            let everyone: Vec<&ParamVector> = ids.iter().map(|id| &ins[id]).collect();
            let mean_s = direct_mean(&survivors);
            let mean_a = direct_mean(&everyone);
            for (off, len) in bounds {
                if len == 0 {
                    continue;
                }
                let got = &first.as_slice()[off..off + len];
                let close_s = got
                    .iter()
                    .zip(&mean_s[off..off + len])
                    .all(|(a, b)| (a - b).abs() <= 1e-9 * b.abs().max(1.0));
                let close_a = got
                    .iter()
                    .zip(&mean_a[off..off + len])
                    .all(|(a, b)| (a - b).abs() <= 1e-9 * b.abs().max(1.0));
                assert!(
                    close_s || close_a,
                    "k={k}, segment at {off}: {got:?} matches neither mean"
                );
            }
        }
    }

    #[test]
    fn random_failure_scripts_terminate() {
        let mut rng = ChaCha8Rng::seed_from_u64(909);
        for trial in 0..100 {
            let n = rng.gen_range(3..=8usize);
            let ids: Vec<DeviceId> = (0..n as u32).collect();
            let ins: BTreeMap<DeviceId, ParamVector> = ids
                .iter()
                .map(|&id| {
                    (
                        id,
                        ParamVector::from_values(
                            (0..9).map(|_| rng.gen_range(-2.0..2.0)).collect(),
                        )
                        .unwrap(),
                    )
                })
                .collect();
            let mut driver = SessionDriver::new(&ring(&ids), ins).unwrap();
            // kill up to n-2 members at random points
            let kills = rng.gen_range(0..=(n - 2));
            let mut victims = ids.clone();
            for _ in 0..kills {
                let v = victims.remove(rng.gen_range(0..victims.len()));
                driver = driver.kill_after_sends(v, rng.gen_range(0..12));
            }
            let report = driver.run().unwrap_or_else(|e| panic!("trial {trial}: {e}"));
            // every survivor either finished or aborted; no silent hang
            let finished = report.results.len() + report.aborted.len();
            assert!(
                finished >= n - kills,
                "trial {trial}: only {finished} of {} survivors settled",
                n - kills
            );
            if report.aborted.is_empty() && report.results.len() >= 2 {
                let first = report.results.values().next().unwrap();
                for v in report.results.values() {
                    assert_eq!(v, first, "trial {trial}: consensus violated");
                }
            }
        }
    }
}

