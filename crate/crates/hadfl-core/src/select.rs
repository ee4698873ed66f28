//! Probability-based participant selection, ring topology and grouping.
//!
//! Selection scores each device by a Gaussian density centered at the third
//! quartile of the version forecasts, so devices with medial versions are
//! preferred while stragglers keep a strictly positive probability.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::DeviceId;

/// Minimum post-normalization probability for any available device.
/// Stragglers are de-emphasized, never discarded.
pub const PROB_FLOOR: f64 = 1e-6;

/// How the score spread is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SigmaMode {
    /// `sigma = max(IQR of versions, version quantum)`. Scale-appropriate
    /// when versions span hundreds of epochs.
    Iqr,
    /// Literal unit spread.
    Unit,
}

/// The resolution of version counts; used as the sigma lower bound so an
/// all-identical round degrades to a uniform distribution instead of a
/// zero-width density.
pub const VERSION_QUANTUM: f64 = 1.0;

/// Selection probabilities for one round.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionDistribution {
    /// Third quartile of the version forecasts.
    pub mu: f64,
    pub sigma: f64,
    pub probs: BTreeMap<DeviceId, f64>,
}

/// Directed ring: each device sends to its successor, the last to the first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RingTopology {
    order: Vec<DeviceId>,
}

impl RingTopology {
    pub fn new(order: Vec<DeviceId>) -> Result<Self> {
        if order.len() < 2 {
            return Err(Error::invalid("ring", "needs at least 2 devices"));
        }
        let mut sorted = order.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != order.len() {
            return Err(Error::invalid("ring", "duplicate device ids"));
        }
        Ok(RingTopology { order })
    }

    pub fn order(&self) -> &[DeviceId] {
        &self.order
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn contains(&self, id: DeviceId) -> bool {
        self.order.contains(&id)
    }

    /// Position of a member in the ring order.
    pub fn position(&self, id: DeviceId) -> Option<usize> {
        self.order.iter().position(|&d| d == id)
    }

    pub fn successor(&self, id: DeviceId) -> Option<DeviceId> {
        let p = self.position(id)?;
        Some(self.order[(p + 1) % self.order.len()])
    }

    pub fn predecessor(&self, id: DeviceId) -> Option<DeviceId> {
        let p = self.position(id)?;
        Some(self.order[(p + self.order.len() - 1) % self.order.len()])
    }

    /// Canonical form for distribution tests: rotated so the smallest id
    /// comes first. Two rings are the same cycle iff their canonical orders
    /// are equal.
    pub fn canonical(&self) -> Vec<DeviceId> {
        let min_pos = self
            .order
            .iter()
            .enumerate()
            .min_by_key(|(_, &d)| d)
            .map(|(i, _)| i)
            .unwrap_or(0);
        let mut out = Vec::with_capacity(self.order.len());
        for i in 0..self.order.len() {
            out.push(self.order[(min_pos + i) % self.order.len()]);
        }
        out
    }
}

/// Device grouping for large clusters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupLayout {
    pub groups: Vec<Vec<DeviceId>>,
    /// Inter-group sync period as a multiple of the intra-group period.
    pub inter_sync_multiple: u32,
}

/// Third quartile by the nearest-rank method: sorted ascending, element at
/// index `ceil(0.75 * n) - 1`.
pub fn third_quartile(versions: &[f64]) -> Result<f64> {
    quantile_nearest_rank(versions, 0.75)
}

fn quantile_nearest_rank(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid("versions", "must be non-empty"));
    }
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let n = sorted.len() as f64;
    let rank = (q * n).ceil() as usize;
    Ok(sorted[rank.max(1) - 1])
}

/// Gaussian-density scores around the third quartile, normalized into a
/// probability distribution with a positivity floor.
pub fn selection_probabilities(
    versions: &BTreeMap<DeviceId, f64>,
    sigma_mode: SigmaMode,
) -> Result<SelectionDistribution> {
    if versions.len() < 2 {
        return Err(Error::invalid("versions", "need at least 2 available devices"));
    }
    let vals: Vec<f64> = versions.values().copied().collect();
    let mu = third_quartile(&vals)?;
    let sigma = match sigma_mode {
        SigmaMode::Unit => 1.0,
        SigmaMode::Iqr => {
            let q1 = quantile_nearest_rank(&vals, 0.25)?;
            (mu - q1).max(VERSION_QUANTUM)
        }
    };
    let mut probs: BTreeMap<DeviceId, f64> = versions
        .iter()
        .map(|(&id, &v)| {
            let z = (v - mu) / sigma;
            (id, (-0.5 * z * z).exp())
        })
        .collect();
    let total: f64 = probs.values().sum();
    if !(total > 0.0) {
        // all scores underflowed; fall back to uniform
        let u = 1.0 / probs.len() as f64;
        for p in probs.values_mut() {
            *p = u;
        }
    } else {
        for p in probs.values_mut() {
            *p /= total;
        }
    }
    // floor and renormalize so stragglers are never fully discarded
    for p in probs.values_mut() {
        *p = p.max(PROB_FLOOR);
    }
    let total: f64 = probs.values().sum();
    for p in probs.values_mut() {
        *p /= total;
    }
    Ok(SelectionDistribution { mu, sigma, probs })
}

/// Draws `n_p` distinct participants by sequential weighted sampling
/// without replacement, renormalizing after each draw.
pub fn sample_participants<R: Rng>(
    dist: &SelectionDistribution,
    n_p: usize,
    rng: &mut R,
) -> Result<Vec<DeviceId>> {
    let k = dist.probs.len();
    if n_p < 2 || n_p > k {
        return Err(Error::invalid(
            "n_p",
            format!("must lie in [2, {k}], got {n_p}"),
        ));
    }
    let mut remaining: Vec<(DeviceId, f64)> =
        dist.probs.iter().map(|(&id, &p)| (id, p)).collect();
    let mut chosen = Vec::with_capacity(n_p);
    for _ in 0..n_p {
        let total: f64 = remaining.iter().map(|(_, p)| p).sum();
        let mut u = rng.gen::<f64>() * total;
        let mut pick = remaining.len() - 1;
        for (i, (_, p)) in remaining.iter().enumerate() {
            if u < *p {
                pick = i;
                break;
            }
            u -= p;
        }
        chosen.push(remaining.remove(pick).0);
    }
    chosen.sort_unstable();
    Ok(chosen)
}

/// Uniformly random directed ring over the selected devices.
pub fn build_ring<R: Rng>(selected: &[DeviceId], rng: &mut R) -> Result<RingTopology> {
    if selected.len() < 2 {
        return Err(Error::invalid("selected", "ring needs at least 2 devices"));
    }
    let mut order: Vec<DeviceId> = selected.to_vec();
    order.sort_unstable();
    order.shuffle(rng);
    RingTopology::new(order)
}

/// Random balanced partition into groups of at most `max_group_size`
/// devices; group sizes differ by at most one.
pub fn partition_groups<R: Rng>(
    devices: &[DeviceId],
    max_group_size: usize,
    inter_sync_multiple: u32,
    rng: &mut R,
) -> Result<GroupLayout> {
    if max_group_size < 2 {
        return Err(Error::invalid("max_group_size", "must be at least 2"));
    }
    if inter_sync_multiple == 0 {
        return Err(Error::invalid("inter_sync_multiple", "must be at least 1"));
    }
    let n = devices.len();
    let mut shuffled: Vec<DeviceId> = devices.to_vec();
    shuffled.sort_unstable();
    shuffled.shuffle(rng);
    let g = n.div_ceil(max_group_size).max(1);
    let base = n / g;
    let extra = n % g;
    let mut groups = Vec::with_capacity(g);
    let mut cursor = 0;
    for i in 0..g {
        let size = base + usize::from(i < extra);
        let mut members: Vec<DeviceId> = shuffled[cursor..cursor + size].to_vec();
        members.sort_unstable();
        cursor += size;
        groups.push(members);
    }
    Ok(GroupLayout {
        groups,
        inter_sync_multiple,
    })
}
