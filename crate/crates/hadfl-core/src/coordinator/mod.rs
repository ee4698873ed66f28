//! Cloud coordinator: liveness monitoring, training-strategy generation,
//! runtime supervision and model backup.
//!
//! The coordinator is centralized for control only. Apart from the initial
//! model dispatch and checkpoint pulls, model parameters travel strictly
//! peer-to-peer.

mod checkpoint;

pub use checkpoint::{read_checkpoint, Checkpoint, CheckpointStore, CHECKPOINT_MAGIC};

use std::collections::{BTreeMap, BTreeSet};

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::predict::VersionTracker;
use crate::rat::Rat;
use crate::schedule::{build_schedule, expected_version, ScheduleConfig, ScheduleParams};
use crate::select::{
    build_ring, partition_groups, sample_participants, selection_probabilities, GroupLayout,
    RingTopology, SelectionDistribution, SigmaMode,
};
use crate::DeviceId;

/// Which version estimate feeds the selection function.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VersionSource {
    /// One-step forecasts from the smoothing trackers (default).
    Predicted,
    /// Last observed versions.
    Observed,
}

/// Marks a device available iff its latest heartbeat is within `timeout`
/// of `now`.
pub fn liveness_scan(
    heartbeats: &BTreeMap<DeviceId, Rat>,
    now: Rat,
    timeout: Rat,
) -> Result<BTreeSet<DeviceId>> {
    if timeout <= Rat::new(0, 1) {
        return Err(Error::invalid("timeout", "must be positive"));
    }
    Ok(heartbeats
        .iter()
        .filter(|(_, &last)| now - last <= timeout)
        .map(|(&id, _)| id)
        .collect())
}

/// One round's full training configuration.
#[derive(Debug, Clone)]
pub struct StrategyConfig {
    pub schedule: ScheduleConfig,
    pub selected: Vec<DeviceId>,
    pub ring: RingTopology,
    pub distribution: SelectionDistribution,
    pub groups: GroupLayout,
    /// Ring member that broadcasts the aggregate to unselected devices.
    pub broadcaster: DeviceId,
}

/// Knobs for strategy generation beyond the schedule itself.
#[derive(Debug, Clone, Copy)]
pub struct StrategyParams {
    pub schedule: ScheduleParams,
    pub n_p: usize,
    pub sigma_mode: SigmaMode,
    pub max_group_size: usize,
    pub inter_sync_multiple: u32,
}

/// Composes schedule, selection, ring and grouping into one strategy.
/// Deterministic given the RNG states.
#[allow(clippy::too_many_arguments)]
pub fn generate_strategy(
    warmup_times: &BTreeMap<DeviceId, Rat>,
    versions: &BTreeMap<DeviceId, f64>,
    params: &StrategyParams,
    forced_selection: Option<&[DeviceId]>,
    selection_rng: &mut ChaCha8Rng,
    ring_rng: &mut ChaCha8Rng,
    group_rng: &mut ChaCha8Rng,
    broadcast_rng: &mut ChaCha8Rng,
) -> Result<StrategyConfig> {
    let schedule = build_schedule(warmup_times, &params.schedule)?;
    let distribution = selection_probabilities(versions, params.sigma_mode)?;
    let selected: Vec<DeviceId> = match forced_selection {
        Some(ids) => {
            let mut ids: Vec<DeviceId> = ids.to_vec();
            ids.sort_unstable();
            for id in &ids {
                if !versions.contains_key(id) {
                    return Err(Error::invalid(
                        "force_select",
                        format!("device {id} is not available"),
                    ));
                }
            }
            ids
        }
        None => sample_participants(&distribution, params.n_p, selection_rng)?,
    };
    let ring = build_ring(&selected, ring_rng)?;
    let devices: Vec<DeviceId> = versions.keys().copied().collect();
    let max_group = if params.max_group_size >= 2 {
        params.max_group_size
    } else {
        devices.len().max(2)
    };
    let groups = partition_groups(&devices, max_group, params.inter_sync_multiple, group_rng)?;
    let broadcaster = {
        use rand::Rng;
        ring.order()[broadcast_rng.gen_range(0..ring.len())]
    };
    Ok(StrategyConfig {
        schedule,
        selected,
        ring,
        distribution,
        groups,
        broadcaster,
    })
}

/// Cold-start version expectations from measured warm-up times: warm-up
/// epochs already applied plus the expected epochs of the first interval.
pub fn warmup_expected_versions(
    schedule: &ScheduleConfig,
    e_warmup: u32,
) -> BTreeMap<DeviceId, f64> {
    schedule
        .per_epoch
        .iter()
        .map(|(&id, &t)| {
            (
                id,
                f64::from(e_warmup) + expected_version(t, schedule.hyperperiod, schedule.t_sync),
            )
        })
        .collect()
}

/// Advances trackers with this round's observed versions and returns the
/// next-round forecasts. Devices that skipped the round keep their previous
/// forecast.
pub fn runtime_supervise(
    trackers: &mut BTreeMap<DeviceId, VersionTracker>,
    observed: &BTreeMap<DeviceId, f64>,
) -> BTreeMap<DeviceId, f64> {
    let mut predictions = BTreeMap::new();
    for (&id, tracker) in trackers.iter_mut() {
        if let Some(&v) = observed.get(&id) {
            tracker.observe(v);
        }
        predictions.insert(id, tracker.predict(1));
    }
    predictions
}
