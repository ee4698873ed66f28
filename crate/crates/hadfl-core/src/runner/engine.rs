//! The experiment engine: devices, coordinator and protocol sessions wired
//! onto the discrete-event simulator.
//!
//! One engine runs all three schemes:
//! - heterogeneity-aware rounds with warm-up speed measurement, version
//!   forecasting, probabilistic selection, ring aggregation over the
//!   selected devices and a non-blocking broadcast to the rest;
//! - decentralized federated averaging: every device runs the same number
//!   of local epochs, then all devices merge accumulated update deltas over
//!   a ring, gated by the slowest device;
//! - synchronous all-reduce: one ring gradient average per iteration.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::config::{ExperimentConfig, Scheme};
use crate::coordinator::{
    generate_strategy, liveness_scan, runtime_supervise, warmup_expected_versions,
    CheckpointStore, StrategyConfig, StrategyParams, VersionSource,
};
use crate::error::{Error, Result};
use crate::gossip::{
    integrate_received, partial_aggregate, MemberEvent, MemberOutput, MessageKind, Payload,
    PeerMessage, RingMember, TimerKind,
};
use crate::metrics::MetricsRecord;
use crate::model::{
    compute_gradient, evaluate, local_train, make_synthetic_dataset, partition_dataset,
    DataPartition, HyperParams, ModelSpec, ParamVector, Sample,
};
use crate::predict::VersionTracker;
use crate::rat::{from_seconds_f64, rat, rat_int, to_f64, Rat, MICRO};
use crate::rng::{derive_seed, stream_rng, Stream};
use crate::select::{build_ring, RingTopology};
use crate::simnet::{EventQueue, LatencyModel, LinkFifo, TrafficCounter, TrafficSnapshot};
use crate::{DeviceId, COORDINATOR_ID};

/// Everything a finished (or aborted) run leaves behind.
#[derive(Debug)]
pub struct RunOutput {
    pub records: Vec<MetricsRecord>,
    pub final_params: ParamVector,
    pub traffic: TrafficSnapshot,
    pub virtual_time: f64,
    pub aborted: bool,
    pub abort_reason: Option<String>,
}

#[derive(Debug)]
enum Event {
    Heartbeat(DeviceId),
    WarmupDone(DeviceId),
    ComputeDone { device: DeviceId, round: u64 },
    Deliver { to: DeviceId, msg: PeerMessage },
    MemberTimer {
        device: DeviceId,
        kind: TimerKind,
        generation: u64,
        tag: u64,
    },
    Disconnect(DeviceId),
    Reconnect(DeviceId),
}

struct Device {
    id: DeviceId,
    epoch_time: Rat,
    partition: DataPartition,
    params: ParamVector,
    /// Cumulative local epochs applied.
    version: u64,
    /// Mini-batch iterations applied (per-iteration baseline).
    iters: u64,
    connected: bool,
    /// Warm-up finished (speed measured) and ready for rounds.
    ready: bool,
    awaiting_dispatch: bool,
    member: Option<(u64, RingMember)>,
    /// Value this device contributes to the next session when it is not
    /// its current model (update deltas, gradients).
    session_input: Option<ParamVector>,
}

struct Coord {
    heartbeats: BTreeMap<DeviceId, Rat>,
    warmup_times: BTreeMap<DeviceId, Rat>,
    trackers: BTreeMap<DeviceId, VersionTracker>,
    global: ParamVector,
}

struct SessionState {
    tag: u64,
    group: usize,
    ring: RingTopology,
    pending: BTreeSet<DeviceId>,
    completed: BTreeMap<DeviceId, ParamVector>,
    inputs: BTreeMap<DeviceId, ParamVector>,
    attempt: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RoundPhase {
    Training,
    Aggregating,
    InterGroup,
    Broadcasting,
}

struct RoundState {
    round: u64,
    phase: RoundPhase,
    /// Globally agreed model at round start (baselines apply aggregated
    /// updates to it).
    base: ParamVector,
    strategy: Option<StrategyConfig>,
    computing: BTreeSet<DeviceId>,
    sessions: Vec<SessionState>,
    inter_session: Option<SessionState>,
    group_results: BTreeMap<usize, ParamVector>,
    broadcast_targets: BTreeSet<DeviceId>,
    /// Devices already holding their round result.
    holders: BTreeSet<DeviceId>,
    participants: Vec<DeviceId>,
    traffic_mark: TrafficSnapshot,
}

const INTER_GROUP: usize = usize::MAX;
const CONVERGENCE_WINDOW: usize = 5;
const CONVERGENCE_TOL: f64 = 1e-4;
const MAX_EVENTS: u64 = 200_000_000;
const MAX_SESSION_ATTEMPTS: u32 = 8;

pub struct Engine<'a> {
    cfg: &'a ExperimentConfig,
    seed: u64,
    spec: ModelSpec,
    hp: HyperParams,
    queue: EventQueue<Event>,
    fifo: LinkFifo,
    traffic: TrafficCounter,
    latency: LatencyModel,
    latency_rng: ChaCha8Rng,
    devices: BTreeMap<DeviceId, Device>,
    coord: Coord,
    train_samples: Vec<Sample>,
    test_samples: Vec<Sample>,
    records: Vec<MetricsRecord>,
    store: Option<CheckpointStore>,
    wait_timeout: Rat,
    handshake_timeout: Rat,
    heartbeat_interval: Rat,
    liveness_timeout: Rat,
    round: Option<RoundState>,
    session_tags: u64,
    recent_losses: Vec<f64>,
    done: bool,
    aborted: Option<String>,
    iteration: u64,
}

impl<'a> Engine<'a> {
    pub fn new(
        cfg: &'a ExperimentConfig,
        seed: u64,
        store: Option<CheckpointStore>,
    ) -> Result<Self> {
        cfg.validate()?;
        let spec = cfg.model_spec();
        let task = cfg.synth_task()?;
        // one generation covers train and test so both share the task's
        // sampled geometry; the tail becomes the held-out set
        let full = make_synthetic_dataset(
            task,
            cfg.n_train + cfg.n_test,
            cfg.input_dim,
            cfg.data_seed,
        )?;
        let mut train = full;
        let test_samples: Vec<Sample> = train.samples.split_off(cfg.n_train);
        let partitions = partition_dataset(
            &train,
            cfg.device_count(),
            cfg.partition,
            derive_seed(cfg.data_seed, Stream::Partition, 0, 0),
        )?;
        for p in &partitions {
            if p.len() < cfg.batch_size {
                return Err(Error::TooFewSamples {
                    needed: cfg.batch_size,
                    got: p.len(),
                });
            }
        }
        let w0 = ParamVector::zeros(spec.param_count());
        let mut devices = BTreeMap::new();
        for (idx, partition) in partitions.into_iter().enumerate() {
            let id = idx as DeviceId;
            devices.insert(
                id,
                Device {
                    id,
                    epoch_time: cfg.epoch_time(id),
                    partition,
                    params: w0.clone(),
                    version: 0,
                    iters: 0,
                    connected: true,
                    ready: false,
                    awaiting_dispatch: true,
                    member: None,
                    session_input: None,
                },
            );
        }
        let base_latency = cfg.latency_model();
        let wait_timeout = wait_timeout_from(&base_latency, cfg.wait_timeout_factor);
        Ok(Engine {
            cfg,
            seed,
            spec,
            hp: cfg.hyper_params(),
            queue: EventQueue::new(),
            fifo: LinkFifo::new(),
            traffic: TrafficCounter::new(),
            latency: base_latency,
            latency_rng: stream_rng(seed, Stream::Latency, 0, 0),
            devices,
            coord: Coord {
                heartbeats: BTreeMap::new(),
                warmup_times: BTreeMap::new(),
                trackers: BTreeMap::new(),
                global: w0,
            },
            train_samples: train.samples,
            test_samples,
            records: Vec::new(),
            store,
            wait_timeout,
            handshake_timeout: wait_timeout,
            heartbeat_interval: from_seconds_f64(cfg.heartbeat_interval),
            liveness_timeout: from_seconds_f64(cfg.liveness_timeout),
            round: None,
            session_tags: 0,
            recent_losses: Vec::new(),
            done: false,
            aborted: None,
            iteration: 0,
        })
    }

    pub fn run(mut self) -> Result<RunOutput> {
        if self.cfg.t_total == 0 {
            let (loss, acc) = self.evaluate_global()?;
            self.push_record(0, loss, acc, Vec::new(), 0, self.traffic.snapshot());
            return Ok(self.finish());
        }
        for ev in self.cfg.failure_script()?.events().to_vec() {
            self.queue
                .schedule(ev.disconnect_at, Event::Disconnect(ev.device))?;
            if let Some(r) = ev.reconnect_at {
                self.queue.schedule(r, Event::Reconnect(ev.device))?;
            }
        }
        let ids: Vec<DeviceId> = self.devices.keys().copied().collect();
        for &id in &ids {
            self.queue.schedule(rat_int(0), Event::Heartbeat(id))?;
            let msg = PeerMessage {
                sender: COORDINATOR_ID,
                sync_round: 0,
                payload: Payload::ModelBroadcast {
                    version: 0,
                    params: self.coord.global.clone(),
                },
            };
            self.send_message(COORDINATOR_ID, id, msg);
        }

        let mut processed: u64 = 0;
        while !self.done {
            let (_, ev) = match self.queue.pop() {
                Some(x) => x,
                None => break,
            };
            processed += 1;
            if processed > MAX_EVENTS {
                return Err(Error::Protocol("event budget exhausted".into()));
            }
            self.handle_event(ev)?;
        }
        Ok(self.finish())
    }

    fn finish(mut self) -> RunOutput {
        let virtual_time = to_f64(self.queue.now());
        if let Some(store) = self.store.as_mut() {
            let round = self.records.last().map(|r| r.sync_round + 1).unwrap_or(1);
            let _ = store.backup(&self.coord.global, round, self.queue.now(), 1);
        }
        RunOutput {
            records: std::mem::take(&mut self.records),
            final_params: self.coord.global.clone(),
            traffic: self.traffic.snapshot(),
            virtual_time,
            aborted: self.aborted.is_some(),
            abort_reason: self.aborted.clone(),
        }
    }

    // ------------------------------------------------------------------
    // messaging

    fn send_message(&mut self, from: DeviceId, to: DeviceId, msg: PeerMessage) {
        let bytes = msg.encoded_len() as u64;
        self.traffic.record_sent(from, to, msg.kind(), bytes);
        let delay = self.latency.delay(msg.encoded_len(), &mut self.latency_rng);
        let at = self.fifo.enforce(from, to, self.queue.now() + delay);
        self.queue
            .schedule(at, Event::Deliver { to, msg })
            .expect("delivery in the future");
    }

    fn member_handle(&mut self, device: DeviceId, event: MemberEvent) -> Result<()> {
        let out = {
            let dev = self.devices.get_mut(&device).unwrap();
            match dev.member.as_mut() {
                Some((_, member)) => member.handle(event),
                None => return Ok(()),
            }
        };
        self.apply_member_output(device, out)
    }

    fn apply_member_output(&mut self, device: DeviceId, out: MemberOutput) -> Result<()> {
        let tag = match self.devices[&device].member.as_ref() {
            Some((tag, _)) => *tag,
            None => return Ok(()),
        };
        for (to, msg) in out.sends {
            self.send_message(device, to, msg);
        }
        if let Some(generation) = out.arm_wait {
            let at = self.queue.now() + self.wait_timeout;
            self.queue.schedule(
                at,
                Event::MemberTimer {
                    device,
                    kind: TimerKind::Wait,
                    generation,
                    tag,
                },
            )?;
        }
        if let Some(generation) = out.arm_handshake {
            let at = self.queue.now() + self.handshake_timeout;
            self.queue.schedule(
                at,
                Event::MemberTimer {
                    device,
                    kind: TimerKind::Handshake,
                    generation,
                    tag,
                },
            )?;
        }
        if let Some(result) = out.completed {
            self.devices.get_mut(&device).unwrap().member = None;
            self.settle_in_session(tag, device, Some(result))?;
        } else if out.aborted {
            self.devices.get_mut(&device).unwrap().member = None;
            self.settle_in_session(tag, device, None)?;
        }
        Ok(())
    }

    // ------------------------------------------------------------------
    // events

    fn handle_event(&mut self, ev: Event) -> Result<()> {
        match ev {
            Event::Heartbeat(id) => {
                if self.devices[&id].connected {
                    let msg = PeerMessage {
                        sender: id,
                        sync_round: 0,
                        payload: Payload::Heartbeat,
                    };
                    self.send_message(id, COORDINATOR_ID, msg);
                    let at = self.queue.now() + self.heartbeat_interval;
                    self.queue.schedule(at, Event::Heartbeat(id))?;
                }
                Ok(())
            }
            Event::WarmupDone(id) => self.on_warmup_done(id),
            Event::ComputeDone { device, round } => self.on_compute_done(device, round),
            Event::Deliver { to, msg } => self.on_deliver(to, msg),
            Event::MemberTimer {
                device,
                kind,
                generation,
                tag,
            } => {
                let matches = self.devices[&device]
                    .member
                    .as_ref()
                    .map(|(t, _)| *t == tag)
                    .unwrap_or(false);
                if matches && self.devices[&device].connected {
                    self.member_handle(device, MemberEvent::Timeout { kind, generation })?;
                }
                Ok(())
            }
            Event::Disconnect(id) => {
                let member_tag = {
                    let dev = self.devices.get_mut(&id).unwrap();
                    dev.connected = false;
                    dev.ready = false;
                    dev.session_input = None;
                    dev.member.take().map(|(tag, _)| tag)
                };
                self.coord.warmup_times.remove(&id);
                if let Some(tag) = member_tag {
                    self.settle_in_session(tag, id, None)?;
                }
                self.poke_round_progress()
            }
            Event::Reconnect(id) => {
                {
                    let dev = self.devices.get_mut(&id).unwrap();
                    dev.connected = true;
                    dev.awaiting_dispatch = true;
                }
                self.queue.schedule(self.queue.now(), Event::Heartbeat(id))?;
                let msg = PeerMessage {
                    sender: COORDINATOR_ID,
                    sync_round: 0,
                    payload: Payload::ModelBroadcast {
                        version: self.records.last().map(|r| r.sync_round).unwrap_or(0),
                        params: self.coord.global.clone(),
                    },
                };
                self.send_message(COORDINATOR_ID, id, msg);
                Ok(())
            }
        }
    }

    fn on_deliver(&mut self, to: DeviceId, msg: PeerMessage) -> Result<()> {
        if to == COORDINATOR_ID {
            self.traffic
                .record_delivered(to, msg.kind(), msg.encoded_len() as u64);
            if msg.kind() == MessageKind::Heartbeat {
                self.coord.heartbeats.insert(msg.sender, self.queue.now());
                self.maybe_start_first_round()?;
            }
            return Ok(());
        }
        if !self.devices[&to].connected {
            self.traffic
                .record_dropped(msg.kind(), msg.encoded_len() as u64);
            if msg.kind() == MessageKind::ModelBroadcast {
                self.note_broadcast_resolved(to)?;
            }
            return Ok(());
        }
        self.traffic
            .record_delivered(to, msg.kind(), msg.encoded_len() as u64);
        let session_tag = u64::from(msg.sync_round);
        let in_session = self.devices[&to]
            .member
            .as_ref()
            .map(|(t, _)| *t == session_tag)
            .unwrap_or(false);
        match &msg.payload {
            Payload::ModelBroadcast { params, .. } => {
                let params = params.clone();
                self.on_model_broadcast(to, params)
            }
            Payload::Handshake if !in_session => {
                let ack = PeerMessage {
                    sender: to,
                    sync_round: msg.sync_round,
                    payload: Payload::HandshakeAck,
                };
                self.send_message(to, msg.sender, ack);
                Ok(())
            }
            _ if in_session => self.member_handle(to, MemberEvent::Deliver(msg)),
            _ => Ok(()),
        }
    }

    fn on_model_broadcast(&mut self, to: DeviceId, params: ParamVector) -> Result<()> {
        let awaiting = self.devices[&to].awaiting_dispatch;
        if awaiting {
            {
                let dev = self.devices.get_mut(&to).unwrap();
                dev.awaiting_dispatch = false;
                dev.params = params;
            }
            match self.cfg.scheme {
                Scheme::Hadfl => {
                    // mutual negotiation: E_warmup epochs at the warm-up rate
                    let duration = self.compute_duration(to, u64::from(self.cfg.e_warmup), 0);
                    let at = self.queue.now() + duration;
                    self.queue.schedule(at, Event::WarmupDone(to))?;
                }
                Scheme::DFedAvg | Scheme::SyncAllReduce => {
                    self.devices.get_mut(&to).unwrap().ready = true;
                    self.coord.warmup_times.insert(to, rat_int(1));
                    self.maybe_start_first_round()?;
                }
            }
            return Ok(());
        }
        // round broadcast: integrate into the local model
        let is_target = self
            .round
            .as_ref()
            .map(|r| r.broadcast_targets.contains(&to))
            .unwrap_or(false);
        if is_target {
            let beta = match self.cfg.scheme {
                Scheme::Hadfl => self.cfg.beta,
                _ => 1.0,
            };
            let dev = self.devices.get_mut(&to).unwrap();
            dev.params = integrate_received(&dev.params, &params, beta)?;
            if let Some(round) = self.round.as_mut() {
                round.holders.insert(to);
            }
            self.note_broadcast_resolved(to)?;
        }
        Ok(())
    }

    fn note_broadcast_resolved(&mut self, to: DeviceId) -> Result<()> {
        let finished = {
            let Some(round) = self.round.as_mut() else {
                return Ok(());
            };
            if round.phase != RoundPhase::Broadcasting {
                return Ok(());
            }
            round.broadcast_targets.remove(&to);
            round.broadcast_targets.is_empty()
        };
        if finished {
            self.finalize_round()
        } else {
            Ok(())
        }
    }

    fn on_warmup_done(&mut self, id: DeviceId) -> Result<()> {
        if !self.devices[&id].connected {
            return Ok(());
        }
        {
            let noise = self.duration_noise(id, 0);
            let dev = self.devices.get_mut(&id).unwrap();
            let steps = u64::from(self.cfg.e_warmup) * self.hp.iters_per_epoch(dev.partition.len());
            let warm_hp = self.hp.for_warmup();
            let seed = derive_seed(self.seed, Stream::Warmup, id, 0);
            let (params, _) =
                local_train(&dev.params, &self.spec, &dev.partition, steps, &warm_hp, seed)?;
            dev.params = params;
            dev.version += u64::from(self.cfg.e_warmup);
            dev.ready = true;
            // the device reports its measured negotiation time
            let measured = dev.epoch_time * rat_int(i128::from(self.cfg.e_warmup)) * noise;
            self.coord.warmup_times.insert(id, measured);
        }
        self.maybe_start_first_round()
    }

    fn maybe_start_first_round(&mut self) -> Result<()> {
        if self.round.is_some() || self.done || !self.records.is_empty() {
            return Ok(());
        }
        let waiting = self
            .devices
            .values()
            .any(|d| d.connected && !d.ready);
        if waiting {
            return Ok(());
        }
        // the first scan must see every ready device's heartbeat, or the
        // early birds would start the round without the rest
        let ready_count = self
            .devices
            .values()
            .filter(|d| d.connected && d.ready)
            .count();
        let available = self.available_devices();
        if available.len() < ready_count.max(2) {
            return Ok(());
        }
        self.start_round(1)
    }

    // ------------------------------------------------------------------
    // rounds

    fn available_devices(&self) -> Vec<DeviceId> {
        let heartbeat_ok =
            liveness_scan(&self.coord.heartbeats, self.queue.now(), self.liveness_timeout)
                .unwrap_or_default();
        self.devices
            .values()
            .filter(|d| d.connected && d.ready && heartbeat_ok.contains(&d.id))
            .map(|d| d.id)
            .collect()
    }

    fn start_round(&mut self, round: u64) -> Result<()> {
        let available = self.available_devices();
        if available.len() < 2 {
            self.aborted = Some(format!(
                "cluster shrank to {} available device(s)",
                available.len()
            ));
            self.done = true;
            return Ok(());
        }
        let traffic_mark = self.traffic.snapshot();
        let base = self.coord.global.clone();
        let strategy = match self.cfg.scheme {
            Scheme::Hadfl => Some(self.build_strategy(round, &available)?),
            _ => None,
        };
        let start = self.queue.now();
        let mut computing = BTreeSet::new();
        for &id in &available {
            let duration = match self.cfg.scheme {
                Scheme::Hadfl => {
                    let epochs = u64::from(
                        strategy
                            .as_ref()
                            .unwrap()
                            .schedule
                            .local_epochs
                            .get(&id)
                            .copied()
                            .unwrap_or(1),
                    );
                    self.compute_duration(id, epochs, round)
                }
                Scheme::DFedAvg => {
                    self.compute_duration(id, u64::from(self.cfg.baseline_local_epochs), round)
                }
                Scheme::SyncAllReduce => {
                    let ipe = self.hp.iters_per_epoch(self.devices[&id].partition.len());
                    self.compute_duration(id, 1, round) / rat_int(ipe as i128)
                }
            };
            self.queue
                .schedule(start + duration, Event::ComputeDone { device: id, round })?;
            computing.insert(id);
        }
        if self.cfg.scheme == Scheme::SyncAllReduce {
            self.iteration += 1;
        }
        self.round = Some(RoundState {
            round,
            phase: RoundPhase::Training,
            base,
            strategy,
            computing,
            sessions: Vec::new(),
            inter_session: None,
            group_results: BTreeMap::new(),
            broadcast_targets: BTreeSet::new(),
            holders: BTreeSet::new(),
            participants: available,
            traffic_mark,
        });
        Ok(())
    }

    fn build_strategy(&mut self, round: u64, available: &[DeviceId]) -> Result<StrategyConfig> {
        let warmups: BTreeMap<DeviceId, Rat> = available
            .iter()
            .map(|id| (*id, self.coord.warmup_times[id]))
            .collect();
        let schedule_params = self.cfg.schedule_params();
        let strategy_params = StrategyParams {
            schedule: schedule_params,
            n_p: self.cfg.n_p.min(available.len()).max(2),
            sigma_mode: self.cfg.sigma_mode,
            max_group_size: self.cfg.group_max_size,
            inter_sync_multiple: self.cfg.inter_sync_multiple,
        };
        let schedule = crate::schedule::build_schedule(&warmups, &schedule_params)?;
        let versions: BTreeMap<DeviceId, f64> = if round == 1 {
            warmup_expected_versions(&schedule, self.cfg.e_warmup)
        } else {
            available
                .iter()
                .map(|id| {
                    let v = match self.cfg.versions_from {
                        VersionSource::Predicted => self
                            .coord
                            .trackers
                            .get(id)
                            .map(|t| t.predict(1))
                            .unwrap_or(self.devices[id].version as f64),
                        VersionSource::Observed => self.devices[id].version as f64,
                    };
                    (*id, v)
                })
                .collect()
        };
        for (&id, &v) in &versions {
            self.coord
                .trackers
                .entry(id)
                .or_insert(VersionTracker::init(self.cfg.alpha, v)?);
        }
        let forced: Option<Vec<DeviceId>> = if self.cfg.force_select.is_empty() {
            None
        } else {
            let forced: Vec<DeviceId> = self
                .cfg
                .force_select
                .iter()
                .copied()
                .filter(|id| available.contains(id))
                .collect();
            if forced.len() >= 2 {
                Some(forced)
            } else {
                None
            }
        };
        let mut sel_rng = stream_rng(self.seed, Stream::Selection, 0, round);
        let mut ring_rng = stream_rng(self.seed, Stream::Ring, 0, round);
        let mut group_rng = stream_rng(self.seed, Stream::Groups, 0, round);
        let mut bcast_rng = stream_rng(self.seed, Stream::Broadcast, 0, round);
        generate_strategy(
            &warmups,
            &versions,
            &strategy_params,
            forced.as_deref(),
            &mut sel_rng,
            &mut ring_rng,
            &mut group_rng,
            &mut bcast_rng,
        )
    }

    fn on_compute_done(&mut self, device: DeviceId, round: u64) -> Result<()> {
        let active = self
            .round
            .as_ref()
            .map(|r| r.round == round && r.phase == RoundPhase::Training)
            .unwrap_or(false);
        if !active {
            return Ok(());
        }
        if !self.devices[&device].connected {
            return self.poke_round_progress();
        }
        match self.cfg.scheme {
            Scheme::Hadfl => {
                let epochs = {
                    let strategy = self.round.as_ref().unwrap().strategy.as_ref().unwrap();
                    u64::from(
                        strategy
                            .schedule
                            .local_epochs
                            .get(&device)
                            .copied()
                            .unwrap_or(1),
                    )
                };
                let dev = self.devices.get_mut(&device).unwrap();
                let steps = epochs * self.hp.iters_per_epoch(dev.partition.len());
                let seed = derive_seed(self.seed, Stream::LocalTrain, device, round);
                let (params, _) =
                    local_train(&dev.params, &self.spec, &dev.partition, steps, &self.hp, seed)?;
                dev.params = params;
                dev.version += epochs;
            }
            Scheme::DFedAvg => {
                let epochs = u64::from(self.cfg.baseline_local_epochs);
                let dev = self.devices.get_mut(&device).unwrap();
                let steps = epochs * self.hp.iters_per_epoch(dev.partition.len());
                let seed = derive_seed(self.seed, Stream::LocalTrain, device, round);
                let (params, _) =
                    local_train(&dev.params, &self.spec, &dev.partition, steps, &self.hp, seed)?;
                // contribute the accumulated update, not the model
                let base = self.round.as_ref().unwrap().base.clone();
                let delta: Vec<f64> = params
                    .as_slice()
                    .iter()
                    .zip(base.as_slice())
                    .map(|(a, b)| a - b)
                    .collect();
                let dev = self.devices.get_mut(&device).unwrap();
                dev.session_input = Some(ParamVector::from_values(delta)?);
                dev.params = params;
                dev.version += epochs;
            }
            Scheme::SyncAllReduce => {
                let dev = self.devices.get_mut(&device).unwrap();
                let mut rng = stream_rng(self.seed, Stream::LocalTrain, device, round);
                let batch: Vec<Sample> = (0..self.hp.batch_size)
                    .map(|_| {
                        let idx = rng.gen_range(0..dev.partition.len());
                        dev.partition.samples[idx].clone()
                    })
                    .collect();
                let grad = compute_gradient(&dev.params, &self.spec, &batch)?;
                dev.session_input = Some(grad);
                dev.iters += 1;
                let ipe = self.hp.iters_per_epoch(dev.partition.len());
                dev.version = dev.iters / ipe;
            }
        }
        let round_state = self.round.as_mut().unwrap();
        round_state.computing.remove(&device);
        if round_state.computing.is_empty() {
            self.begin_aggregation()
        } else {
            Ok(())
        }
    }

    /// Re-checks barrier conditions after a disconnect.
    fn poke_round_progress(&mut self) -> Result<()> {
        let phase = match self.round.as_ref() {
            Some(r) => r.phase,
            None => return Ok(()),
        };
        match phase {
            RoundPhase::Training => {
                let empty = {
                    let round = self.round.as_mut().unwrap();
                    let connected: BTreeSet<DeviceId> = round
                        .computing
                        .iter()
                        .copied()
                        .filter(|id| self.devices[id].connected)
                        .collect();
                    round.computing = connected;
                    round.computing.is_empty()
                };
                if empty {
                    return self.begin_aggregation();
                }
            }
            RoundPhase::Broadcasting => {
                // a dead target's broadcast resolves at delivery-drop time
            }
            RoundPhase::Aggregating | RoundPhase::InterGroup => {}
        }
        Ok(())
    }

    fn next_session_tag(&mut self) -> u64 {
        self.session_tags += 1;
        self.session_tags
    }

    fn begin_aggregation(&mut self) -> Result<()> {
        let round_no = self.round.as_ref().unwrap().round;
        self.round.as_mut().unwrap().phase = RoundPhase::Aggregating;
        match self.cfg.scheme {
            Scheme::Hadfl => {
                let strategy = self.round.as_ref().unwrap().strategy.clone().unwrap();
                let groups = strategy.groups.groups.clone();
                let mut sessions = Vec::new();
                for (gi, group) in groups.iter().enumerate() {
                    let mut members: Vec<DeviceId> = strategy
                        .selected
                        .iter()
                        .copied()
                        .filter(|id| group.contains(id) && self.devices[id].connected)
                        .collect();
                    if members.len() < 2 {
                        // too few selected alive in this group; fall back to
                        // aggregating over the group's live members
                        members = group
                            .iter()
                            .copied()
                            .filter(|id| self.devices[id].connected && self.devices[id].ready)
                            .collect();
                    }
                    if members.len() < 2 {
                        continue; // the group sits this round out
                    }
                    let mut ring_rng = stream_rng(self.seed, Stream::Ring, gi as u32 + 1, round_no);
                    let ring = build_ring(&members, &mut ring_rng)?;
                    sessions.push(self.spawn_session(ring, gi, None)?);
                }
                if sessions.is_empty() {
                    self.aborted = Some("no group could form a ring".into());
                    self.done = true;
                    return Ok(());
                }
                self.round.as_mut().unwrap().sessions = sessions;
                Ok(())
            }
            Scheme::DFedAvg | Scheme::SyncAllReduce => {
                let members: Vec<DeviceId> = self
                    .round
                    .as_ref()
                    .unwrap()
                    .participants
                    .iter()
                    .copied()
                    .filter(|id| self.devices[id].connected)
                    .collect();
                if members.len() < 2 {
                    self.aborted = Some("fewer than two devices for the all-reduce".into());
                    self.done = true;
                    return Ok(());
                }
                let mut ring_rng = stream_rng(self.seed, Stream::Ring, 0, round_no);
                let ring = build_ring(&members, &mut ring_rng)?;
                let session = self.spawn_session(ring, 0, None)?;
                self.round.as_mut().unwrap().sessions = vec![session];
                Ok(())
            }
        }
    }

    /// Creates member state machines for a ring and delivers their start
    /// events. `inputs` overrides the per-device contribution (used by the
    /// inter-group pass and session restarts).
    fn spawn_session(
        &mut self,
        ring: RingTopology,
        group: usize,
        inputs: Option<BTreeMap<DeviceId, ParamVector>>,
    ) -> Result<SessionState> {
        let inputs: BTreeMap<DeviceId, ParamVector> = match inputs {
            Some(i) => i,
            None => ring
                .order()
                .iter()
                .map(|id| {
                    let dev = self.devices.get_mut(id).unwrap();
                    let value = dev.session_input.take().unwrap_or_else(|| dev.params.clone());
                    (*id, value)
                })
                .collect(),
        };
        let tag = self.next_session_tag();
        let mut pending = BTreeSet::new();
        for &id in ring.order() {
            let member = RingMember::new(id, ring.clone(), &inputs[&id], tag as u32)?;
            let dev = self.devices.get_mut(&id).unwrap();
            dev.member = Some((tag, member));
            pending.insert(id);
        }
        let state = SessionState {
            tag,
            group,
            ring: ring.clone(),
            pending,
            completed: BTreeMap::new(),
            inputs,
            attempt: 0,
        };
        for &id in ring.order() {
            if self.devices[&id].connected {
                self.member_handle(id, MemberEvent::Start)?;
            }
        }
        Ok(state)
    }

    fn settle_in_session(
        &mut self,
        tag: u64,
        device: DeviceId,
        result: Option<ParamVector>,
    ) -> Result<()> {
        let Some(round) = self.round.as_mut() else {
            return Ok(());
        };
        let is_inter = round
            .inter_session
            .as_ref()
            .map(|s| s.tag == tag)
            .unwrap_or(false);
        let session = if is_inter {
            round.inter_session.as_mut()
        } else {
            round.sessions.iter_mut().find(|s| s.tag == tag)
        };
        let Some(session) = session else {
            return Ok(());
        };
        if !session.pending.remove(&device) {
            return Ok(());
        }
        if let Some(params) = result {
            session.completed.insert(device, params);
        }
        if session.pending.is_empty() {
            self.on_session_finished(tag, is_inter)
        } else {
            Ok(())
        }
    }

    fn on_session_finished(&mut self, tag: u64, is_inter: bool) -> Result<()> {
        let round_no = self.round.as_ref().unwrap().round;
        let (group, completed, inputs, attempt, ring) = {
            let round = self.round.as_ref().unwrap();
            let session = if is_inter {
                round.inter_session.as_ref().unwrap()
            } else {
                round.sessions.iter().find(|s| s.tag == tag).unwrap()
            };
            (
                session.group,
                session.completed.clone(),
                session.inputs.clone(),
                session.attempt,
                session.ring.clone(),
            )
        };
        if completed.is_empty() {
            // nobody finished: rebuild a ring over the live members and
            // retry with the same inputs
            let alive: Vec<DeviceId> = ring
                .order()
                .iter()
                .copied()
                .filter(|id| self.devices[id].connected)
                .collect();
            if alive.len() < 2 || attempt >= MAX_SESSION_ATTEMPTS {
                self.aborted = Some("aggregation session could not complete".into());
                self.done = true;
                return Ok(());
            }
            let mut ring_rng =
                stream_rng(self.seed, Stream::Ring, 1000 + attempt, round_no);
            let new_ring = build_ring(&alive, &mut ring_rng)?;
            let live_inputs: BTreeMap<DeviceId, ParamVector> =
                alive.iter().map(|id| (*id, inputs[id].clone())).collect();
            let mut new_session = self.spawn_session(new_ring, group, Some(live_inputs))?;
            new_session.attempt = attempt + 1;
            let round = self.round.as_mut().unwrap();
            if is_inter {
                round.inter_session = Some(new_session);
            } else {
                let slot = round.sessions.iter_mut().find(|s| s.tag == tag).unwrap();
                *slot = new_session;
            }
            return Ok(());
        }
        let result = completed.values().next().unwrap().clone();
        if is_inter {
            // every representative adopts the aggregate of aggregates
            for &id in completed.keys() {
                self.devices.get_mut(&id).unwrap().params = result.clone();
                self.round.as_mut().unwrap().holders.insert(id);
            }
            let jobs = vec![(result.clone(), self.all_round_devices_except_holders())];
            self.enter_broadcast_phase(result, jobs)
        } else {
            {
                let round = self.round.as_mut().unwrap();
                round.group_results.insert(group, result);
            }
            let all_done = self
                .round
                .as_ref()
                .unwrap()
                .sessions
                .iter()
                .all(|s| s.pending.is_empty());
            if all_done {
                self.after_group_sessions()
            } else {
                Ok(())
            }
        }
    }

    fn all_round_devices_except_holders(&self) -> Vec<DeviceId> {
        let round = self.round.as_ref().unwrap();
        round
            .participants
            .iter()
            .copied()
            .filter(|id| !round.holders.contains(id) && self.devices[id].connected)
            .collect()
    }

    fn after_group_sessions(&mut self) -> Result<()> {
        let round_no = self.round.as_ref().unwrap().round;
        // ring members adopt their session result for model sessions
        if self.cfg.scheme == Scheme::Hadfl {
            let adoption: Vec<(DeviceId, ParamVector)> = {
                let round = self.round.as_ref().unwrap();
                round
                    .sessions
                    .iter()
                    .flat_map(|s| s.completed.iter().map(|(id, p)| (*id, p.clone())))
                    .collect()
            };
            for (id, params) in adoption {
                self.devices.get_mut(&id).unwrap().params = params;
                self.round.as_mut().unwrap().holders.insert(id);
            }
        } else {
            // baselines: members hold the aggregated update; the model
            // update applies uniformly below
            let holders: Vec<DeviceId> = {
                let round = self.round.as_ref().unwrap();
                round
                    .sessions
                    .iter()
                    .flat_map(|s| s.completed.keys().copied())
                    .collect()
            };
            for id in holders {
                self.round.as_mut().unwrap().holders.insert(id);
            }
        }
        let group_results = self.round.as_ref().unwrap().group_results.clone();
        let multi_group = group_results.len() > 1;
        let inter_due =
            multi_group && round_no % u64::from(self.cfg.inter_sync_multiple.max(1)) == 0;
        if inter_due {
            let mut reps: Vec<DeviceId> = Vec::new();
            let mut inputs: BTreeMap<DeviceId, ParamVector> = BTreeMap::new();
            let sessions: Vec<(usize, RingTopology)> = self
                .round
                .as_ref()
                .unwrap()
                .sessions
                .iter()
                .map(|s| (s.group, s.ring.clone()))
                .collect();
            for (group, ring) in sessions {
                if let Some(result) = group_results.get(&group) {
                    if let Some(rep) = ring
                        .order()
                        .iter()
                        .copied()
                        .find(|id| self.devices[id].connected)
                    {
                        reps.push(rep);
                        inputs.insert(rep, result.clone());
                    }
                }
            }
            if reps.len() >= 2 {
                self.round.as_mut().unwrap().phase = RoundPhase::InterGroup;
                let mut ring_rng = stream_rng(self.seed, Stream::Ring, 9999, round_no);
                let ring = build_ring(&reps, &mut ring_rng)?;
                let session = self.spawn_session(ring, INTER_GROUP, Some(inputs))?;
                self.round.as_mut().unwrap().inter_session = Some(session);
                return Ok(());
            }
        }
        match self.cfg.scheme {
            Scheme::Hadfl => {
                if multi_group {
                    // each group broadcasts its own aggregate internally;
                    // the coordinator tracks the mean of group models
                    let strategy = self.round.as_ref().unwrap().strategy.clone().unwrap();
                    let mut jobs = Vec::new();
                    for (group, result) in &group_results {
                        let members = strategy.groups.groups[*group].clone();
                        let holders = self.round.as_ref().unwrap().holders.clone();
                        let targets: Vec<DeviceId> = members
                            .into_iter()
                            .filter(|id| {
                                !holders.contains(id) && self.devices[id].connected
                            })
                            .collect();
                        jobs.push((result.clone(), targets));
                    }
                    let models: BTreeMap<DeviceId, (ParamVector, f64)> = group_results
                        .iter()
                        .map(|(gi, p)| (*gi as DeviceId, (p.clone(), 1.0)))
                        .collect();
                    let global = partial_aggregate(&models)?;
                    self.enter_broadcast_phase(global, jobs)
                } else {
                    let result = group_results.values().next().unwrap().clone();
                    let jobs =
                        vec![(result.clone(), self.all_round_devices_except_holders())];
                    self.enter_broadcast_phase(result, jobs)
                }
            }
            Scheme::DFedAvg => {
                let mean_delta = group_results.values().next().unwrap().clone();
                let base = self.round.as_ref().unwrap().base.clone();
                let updated: Vec<f64> = base
                    .as_slice()
                    .iter()
                    .zip(mean_delta.as_slice())
                    .map(|(b, d)| b + d)
                    .collect();
                let model = ParamVector::from_values(updated)?;
                self.adopt_everywhere(&model);
                let jobs = vec![(model.clone(), self.all_round_devices_except_holders())];
                self.enter_broadcast_phase(model, jobs)
            }
            Scheme::SyncAllReduce => {
                let mean_grad = group_results.values().next().unwrap().clone();
                let base = self.round.as_ref().unwrap().base.clone();
                let model = base.step(&mean_grad, self.hp.learning_rate)?;
                self.adopt_everywhere(&model);
                let jobs = vec![(model.clone(), self.all_round_devices_except_holders())];
                self.enter_broadcast_phase(model, jobs)
            }
        }
    }

    /// Every current holder adopts the given model (baseline rounds end
    /// with all participants on the same parameters).
    fn adopt_everywhere(&mut self, model: &ParamVector) {
        let holders: Vec<DeviceId> = self
            .round
            .as_ref()
            .unwrap()
            .holders
            .iter()
            .copied()
            .collect();
        for id in holders {
            if self.devices[&id].connected {
                self.devices.get_mut(&id).unwrap().params = model.clone();
            }
        }
    }

    fn enter_broadcast_phase(
        &mut self,
        global: ParamVector,
        jobs: Vec<(ParamVector, Vec<DeviceId>)>,
    ) -> Result<()> {
        self.coord.global = global;
        let round_no = self.round.as_ref().unwrap().round;
        let holders = self.round.as_ref().unwrap().holders.clone();
        self.round.as_mut().unwrap().phase = RoundPhase::Broadcasting;
        let mut all_targets = BTreeSet::new();
        let mut sends = Vec::new();
        for (params, targets) in jobs {
            // one live holder emits the non-blocking broadcasts; prefer the
            // strategy's deterministic choice
            let broadcaster = {
                let choice = self
                    .round
                    .as_ref()
                    .unwrap()
                    .strategy
                    .as_ref()
                    .map(|s| s.broadcaster);
                match choice {
                    Some(b) if self.devices[&b].connected && holders.contains(&b) => b,
                    _ => holders
                        .iter()
                        .copied()
                        .find(|id| self.devices[id].connected)
                        .unwrap_or(0),
                }
            };
            for to in targets {
                all_targets.insert(to);
                sends.push((broadcaster, to, params.clone()));
            }
            // model manager pulls the aggregate for backup
            if self.cfg.backup_every > 0 && round_no % self.cfg.backup_every == 0 {
                let msg = PeerMessage {
                    sender: broadcaster,
                    sync_round: round_no as u32,
                    payload: Payload::ModelBroadcast {
                        version: round_no,
                        params: params.clone(),
                    },
                };
                self.send_message(broadcaster, COORDINATOR_ID, msg);
            }
        }
        self.round.as_mut().unwrap().broadcast_targets = all_targets.clone();
        for (from, to, params) in sends {
            let msg = PeerMessage {
                sender: from,
                sync_round: round_no as u32,
                payload: Payload::ModelBroadcast {
                    version: round_no,
                    params,
                },
            };
            self.send_message(from, to, msg);
        }
        if all_targets.is_empty() {
            self.finalize_round()
        } else {
            Ok(())
        }
    }

    fn finalize_round(&mut self) -> Result<()> {
        let round = self.round.take().unwrap();
        let round_no = round.round;
        let observed: BTreeMap<DeviceId, f64> = round
            .participants
            .iter()
            .filter(|id| self.devices[id].connected)
            .map(|id| (*id, self.devices[id].version as f64))
            .collect();
        runtime_supervise(&mut self.coord.trackers, &observed);

        let emit = match self.cfg.scheme {
            Scheme::SyncAllReduce => {
                let ipe = self.hp.iters_per_epoch(self.devices[&0].partition.len());
                self.iteration % ipe == 0
            }
            _ => true,
        };
        if emit {
            let (loss, acc) = self.evaluate_global()?;
            let delta = self.traffic.snapshot().delta_since(&round.traffic_mark);
            let selected = round
                .strategy
                .as_ref()
                .map(|s| s.selected.clone())
                .unwrap_or_else(|| round.participants.clone());
            self.push_record(
                round_no,
                loss,
                acc,
                selected,
                delta.total_sent_bytes(),
                delta,
            );
            self.recent_losses.push(loss);
            if self.store.is_some() && self.cfg.backup_every > 0 {
                let every = self.cfg.backup_every;
                let now = self.queue.now();
                let global = self.coord.global.clone();
                self.store
                    .as_mut()
                    .unwrap()
                    .backup(&global, round_no, now, every)?;
            }
            if self.converged() {
                self.done = true;
                return Ok(());
            }
        }
        let max_version = self.devices.values().map(|d| d.version).max().unwrap_or(0);
        if max_version >= self.cfg.t_total {
            self.done = true;
            return Ok(());
        }
        self.start_round(round_no + 1)
    }

    fn converged(&self) -> bool {
        if self.recent_losses.len() < CONVERGENCE_WINDOW {
            return false;
        }
        let last = self.recent_losses[self.recent_losses.len() - 1];
        let first = self.recent_losses[self.recent_losses.len() - CONVERGENCE_WINDOW];
        (last - first).abs() / first.abs().max(1e-12) < CONVERGENCE_TOL
    }

    fn evaluate_global(&self) -> Result<(f64, f64)> {
        let (loss, _) = evaluate(&self.coord.global, &self.spec, &self.train_samples)?;
        let (_, acc) = evaluate(&self.coord.global, &self.spec, &self.test_samples)?;
        Ok((loss, acc))
    }

    fn push_record(
        &mut self,
        round: u64,
        loss: f64,
        acc: f64,
        selected: Vec<DeviceId>,
        round_bytes: u64,
        _delta: TrafficSnapshot,
    ) {
        let versions: Vec<(DeviceId, u64)> =
            self.devices.values().map(|d| (d.id, d.version)).collect();
        let total_bytes = self.traffic.snapshot().total_sent_bytes();
        self.records.push(MetricsRecord {
            sync_round: round,
            virtual_time: to_f64(self.queue.now()),
            train_loss: loss,
            test_accuracy: acc,
            versions,
            selected,
            round_bytes,
            total_bytes,
        });
    }

    // ------------------------------------------------------------------
    // durations

    fn compute_duration(&mut self, device: DeviceId, epochs: u64, round: u64) -> Rat {
        let base = self.devices[&device].epoch_time * rat_int(epochs as i128);
        base * self.duration_noise(device, round)
    }

    fn duration_noise(&mut self, device: DeviceId, round: u64) -> Rat {
        if self.cfg.compute_noise <= 0.0 {
            return rat_int(1);
        }
        let mut rng = stream_rng(self.seed, Stream::ComputeNoise, device, round);
        let span = (self.cfg.compute_noise * MICRO as f64) as i128;
        let k = rng.gen_range(-span..=span);
        rat_int(1) + rat(k, MICRO)
    }
}

fn wait_timeout_from(latency: &LatencyModel, factor: f64) -> Rat {
    let mean = latency.base + latency.per_byte * rat_int(1024);
    let factored = mean * rat((factor * 1000.0) as i128, 1000);
    // never below one millisecond so zero-latency configs still time out
    factored.max(rat(1, 1000))
}
