//! Heterogeneity-aware scheduling.
//!
//! The warm-up phase measures each device's per-epoch training time. Those
//! times, quantized to a configurable quantum and held as exact rationals,
//! determine the hyperperiod (their least common multiple), the per-device
//! local-epoch budgets between synchronizations, and the expected parameter
//! versions used for cold-start selection.

use std::collections::BTreeMap;

use num_traits::ToPrimitive;

use crate::error::{Error, Result};
use crate::rat::{lcm_rats, quantize, rat_int, Rat};
use crate::DeviceId;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeviceStatus {
    Available,
    Disconnected,
}

/// Per-device identity and runtime facts known to the coordinator.
#[derive(Debug, Clone)]
pub struct DeviceProfile {
    pub id: DeviceId,
    /// Simulation ground truth; the protocol itself only observes times.
    pub compute_power: Rat,
    /// Measured warm-up wall time, in virtual seconds.
    pub warmup_time: Option<Rat>,
    pub status: DeviceStatus,
}

impl DeviceProfile {
    pub fn new(id: DeviceId, compute_power: Rat) -> Self {
        DeviceProfile {
            id,
            compute_power,
            warmup_time: None,
            status: DeviceStatus::Available,
        }
    }

    pub fn is_available(&self) -> bool {
        self.status == DeviceStatus::Available
    }
}

/// One round's schedule: the hyperperiod and per-device epoch budgets.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleConfig {
    pub e_warmup: u32,
    /// Hyperperiod multiples between partial synchronizations.
    pub t_sync: u32,
    /// The hyperperiod, an exact multiple of every quantized per-epoch time.
    pub hyperperiod: Rat,
    /// Local-epoch budget per device for one sync interval.
    pub local_epochs: BTreeMap<DeviceId, u32>,
    /// Quantized per-epoch time per device (what the LCM was computed over).
    pub per_epoch: BTreeMap<DeviceId, Rat>,
}

/// Knobs for schedule generation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleParams {
    pub e_warmup: u32,
    pub t_sync: u32,
    /// Measured times are rounded to multiples of this quantum before the
    /// LCM; the protocol's integer power ratios survive noisy measurement.
    pub time_quantum: Rat,
    /// If the LCM exceeds `cap_factor x max(per-epoch time)`, times are
    /// re-quantized at double the quantum until it fits.
    pub hyperperiod_cap_factor: u32,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        ScheduleParams {
            e_warmup: 3,
            t_sync: 1,
            time_quantum: Rat::new(1, 100),
            hyperperiod_cap_factor: 64,
        }
    }
}

/// Per-epoch training time from a measured warm-up: `T_i / E_warmup`,
/// rounded onto the quantum grid (never below one quantum).
pub fn per_epoch_time(warmup_time: Rat, e_warmup: u32, quantum: Rat) -> Result<Rat> {
    if warmup_time <= rat_int(0) {
        return Err(Error::invalid("warmup_time", "must be positive"));
    }
    if e_warmup == 0 {
        return Err(Error::invalid("e_warmup", "must be at least 1"));
    }
    Ok(quantize(warmup_time / rat_int(e_warmup as i128), quantum))
}

/// Least common multiple of per-epoch times; divisible by every input.
pub fn hyperperiod(times: &[Rat]) -> Result<Rat> {
    if times.is_empty() {
        return Err(Error::invalid("times", "must be non-empty"));
    }
    Ok(lcm_rats(times))
}

/// Local epochs for one device between syncs: `round(T_sync * H_E / t_k)`,
/// at least 1.
pub fn local_steps(per_epoch_time_k: Rat, hyperperiod: Rat, t_sync: u32) -> u32 {
    let exact = rat_int(t_sync as i128) * hyperperiod / per_epoch_time_k;
    let rounded = exact.round().to_integer();
    rounded.max(1).to_u32().unwrap_or(u32::MAX)
}

/// Expected parameter-version increment over one sync interval. Faster
/// devices (smaller per-epoch time) complete more epochs, so the expectation
/// is inversely proportional to the per-epoch time.
pub fn expected_version(per_epoch_time_k: Rat, hyperperiod: Rat, t_sync: u32) -> f64 {
    let exact = rat_int(t_sync as i128) * hyperperiod / per_epoch_time_k;
    exact.to_f64().unwrap_or(f64::NAN)
}

/// Builds a full schedule from measured warm-up times. Applies the quantum,
/// computes the hyperperiod and enforces the cap by re-quantizing coarsely
/// when pathological ratios blow the LCM up.
pub fn build_schedule(
    warmup_times: &BTreeMap<DeviceId, Rat>,
    params: &ScheduleParams,
) -> Result<ScheduleConfig> {
    if warmup_times.is_empty() {
        return Err(Error::invalid("warmup_times", "no measured devices"));
    }
    let mut quantum = params.time_quantum;
    loop {
        let mut per_epoch = BTreeMap::new();
        for (&id, &t) in warmup_times {
            per_epoch.insert(id, per_epoch_time(t, params.e_warmup, quantum)?);
        }
        let times: Vec<Rat> = per_epoch.values().copied().collect();
        let h = hyperperiod(&times)?;
        let max_t = *times.iter().max().unwrap();
        if h <= max_t * rat_int(params.hyperperiod_cap_factor as i128) {
            let local_epochs = per_epoch
                .iter()
                .map(|(&id, &t)| (id, local_steps(t, h, params.t_sync)))
                .collect();
            return Ok(ScheduleConfig {
                e_warmup: params.e_warmup,
                t_sync: params.t_sync,
                hyperperiod: h,
                local_epochs,
                per_epoch,
            });
        }
        quantum = quantum * rat_int(2);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rat::rat;

    fn map(entries: &[(DeviceId, Rat)]) -> BTreeMap<DeviceId, Rat> {
        entries.iter().copied().collect()
    }

    #[test]
    fn per_epoch_time_examples() {
        let q = rat(1, 100);
        assert_eq!(per_epoch_time(rat_int(3), 3, q).unwrap(), rat_int(1));
        // 1 s over 3 epochs quantizes to 33/100 on the default grid
        assert_eq!(per_epoch_time(rat_int(1), 3, q).unwrap(), rat(33, 100));
        assert_eq!(
            per_epoch_time(rat(3334, 10_000), 1, q).unwrap(),
            rat(33, 100)
        );
    }

    #[test]
    fn hyperperiod_power_ratio_4_2_1() {
        let h = hyperperiod(&[rat(1, 4), rat(1, 2), rat_int(1)]).unwrap();
        assert_eq!(h, rat_int(1));
        assert_eq!(local_steps(rat(1, 4), h, 1), 4);
        assert_eq!(local_steps(rat(1, 2), h, 1), 2);
        assert_eq!(local_steps(rat_int(1), h, 1), 1);
    }

    #[test]
    fn local_steps_ratio_3311_tsync2() {
        let times = [rat(1, 3), rat(1, 3), rat_int(1), rat_int(1)];
        let h = hyperperiod(&times).unwrap();
        assert_eq!(h, rat_int(1));
        let e: Vec<u32> = times.iter().map(|&t| local_steps(t, h, 2)).collect();
        assert_eq!(e, vec![6, 6, 2, 2]);
    }

    #[test]
    fn homogeneous_devices_get_equal_steps() {
        let times = [rat(1, 2); 5];
        let h = hyperperiod(&times).unwrap();
        let e: Vec<u32> = times.iter().map(|&t| local_steps(t, h, 1)).collect();
        assert!(e.iter().all(|&x| x == e[0]));
    }

    #[test]
    fn expected_version_matches_unrounded_steps() {
        let h = rat_int(1);
        assert_eq!(expected_version(rat(1, 4), h, 1), 4.0);
        assert_eq!(expected_version(rat(1, 2), h, 1), 2.0);
        assert_eq!(expected_version(rat_int(1), h, 1), 1.0);
        // doubling T_sync doubles the expectation
        assert_eq!(expected_version(rat(1, 4), h, 2), 8.0);
    }

    #[test]
    fn hyperperiod_is_order_independent() {
        let a = hyperperiod(&[rat(3, 10), rat(7, 10), rat(1, 2)]).unwrap();
        let b = hyperperiod(&[rat(1, 2), rat(3, 10), rat(7, 10)]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn build_schedule_divisibility_and_monotonicity() {
        let wt = map(&[
            (0, rat(3, 4)),   // fast
            (1, rat(3, 2)),   // medium
            (2, rat_int(3)),  // slow
        ]);
        let cfg = build_schedule(&wt, &ScheduleParams::default()).unwrap();
        for t in cfg.per_epoch.values() {
            assert!((cfg.hyperperiod / t).is_integer());
        }
        // slower device never gets a larger budget
        let e: Vec<u32> = cfg.local_epochs.values().copied().collect();
        assert!(e[0] >= e[1] && e[1] >= e[2]);
        assert_eq!(e, vec![4, 2, 1]);
    }

    #[test]
    fn build_schedule_caps_pathological_ratios() {
        // 97/100 vs 1: raw LCM would be 97 x the slow epoch time
        let wt = map(&[(0, rat(97, 100)), (1, rat_int(1))]);
        let params = ScheduleParams {
            e_warmup: 1,
            ..ScheduleParams::default()
        };
        let cfg = build_schedule(&wt, &params).unwrap();
        let max_t = cfg.per_epoch.values().copied().max().unwrap();
        assert!(cfg.hyperperiod <= max_t * rat_int(64));
        for t in cfg.per_epoch.values() {
            assert!((cfg.hyperperiod / t).is_integer());
        }
    }

    #[test]
    fn proportionality_on_integer_ratios() {
        let wt = map(&[(0, rat(1, 4)), (1, rat(1, 2)), (2, rat_int(1))]);
        let params = ScheduleParams {
            e_warmup: 1,
            ..ScheduleParams::default()
        };
        let cfg = build_schedule(&wt, &params).unwrap();
        let e0 = cfg.local_epochs[&0] as f64;
        let e1 = cfg.local_epochs[&1] as f64;
        let e2 = cfg.local_epochs[&2] as f64;
        assert_eq!(e0 / e1, 2.0);
        assert_eq!(e1 / e2, 2.0);
    }
}
