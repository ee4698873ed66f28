//! Synthetic datasets and device partitioning.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::rng::normal;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    /// Class index for classification tasks, real target for regression.
    pub label: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub feature_dim: usize,
    /// Number of classes for classification tasks.
    pub classes: Option<u32>,
    /// Generating weights `[w..., b]` for regression tasks.
    pub ground_truth: Option<Vec<f64>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// One device's slice of the training data.
#[derive(Debug, Clone, PartialEq)]
pub struct DataPartition {
    /// Index of the owning device in the cluster's device order.
    pub owner: u32,
    pub samples: Vec<Sample>,
}

impl DataPartition {
    /// Sample count `n_k`.
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Synthetic task families. Parameters are part of the task identity so a
/// dataset is fully described by `(task, n, dim, seed)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SynthTask {
    /// Two classes separated along one random direction: the projection on
    /// it lies in `[margin, 2*margin]` for one class and the mirror image
    /// for the other, while the orthogonal component is uniform in a ball
    /// of `radius`. Linearly separable with functional margin `margin`,
    /// but the class gap is small against the off-axis spread, so accuracy
    /// climbs gradually instead of in one step.
    Blobs2Class { margin: f64, radius: f64 },
    /// Linear target with standard-normal features and additive Gaussian
    /// noise of the given standard deviation.
    LinregGaussian { noise_std: f64 },
}

impl SynthTask {
    pub fn default_blobs() -> Self {
        SynthTask::Blobs2Class {
            margin: 0.2,
            radius: 3.0,
        }
    }

    pub fn default_linreg() -> Self {
        SynthTask::LinregGaussian { noise_std: 0.1 }
    }
}

/// Deterministic synthetic dataset: the same `(task, n, dim, seed)` always
/// produces identical samples.
pub fn make_synthetic_dataset(task: SynthTask, n: usize, dim: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::invalid("n", "need at least one sample"));
    }
    if dim == 0 {
        return Err(Error::invalid("dim", "need at least one feature"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match task {
        SynthTask::Blobs2Class { margin, radius } => {
            if margin <= 0.0 || radius <= 0.0 {
                return Err(Error::invalid("task", "margin and radius must be positive"));
            }
            // random separating direction
            let mut dir: Vec<f64> = (0..dim).map(|_| normal(&mut rng)).collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            for v in &mut dir {
                *v /= norm;
            }
            let mut samples = Vec::with_capacity(n);
            for i in 0..n {
                let class = (i % 2) as f64;
                let sign = if class > 0.5 { 1.0 } else { -1.0 };
                // along-axis coordinate keeps the stated margin; the rest
                // of the point wanders in the orthogonal ball
                let along = sign * margin * (1.0 + rng.gen::<f64>());
                let noise = ball_point(&mut rng, dim, radius);
                let off_axis: f64 = dir.iter().zip(&noise).map(|(d, z)| d * z).sum();
                let features: Vec<f64> = dir
                    .iter()
                    .zip(&noise)
                    .map(|(d, z)| z + (along - off_axis) * d)
                    .collect();
                samples.push(Sample {
                    features,
                    label: class,
                });
            }
            Ok(Dataset {
                samples,
                feature_dim: dim,
                classes: Some(2),
                ground_truth: Some(dir),
            })
        }
        SynthTask::LinregGaussian { noise_std } => {
            if noise_std < 0.0 {
                return Err(Error::invalid("task", "noise_std must be non-negative"));
            }
            let w_true: Vec<f64> = (0..dim).map(|_| normal(&mut rng)).collect();
            let b_true = normal(&mut rng);
            let mut samples = Vec::with_capacity(n);
            for _ in 0..n {
                let features: Vec<f64> = (0..dim).map(|_| normal(&mut rng)).collect();
                let clean: f64 = w_true
                    .iter()
                    .zip(&features)
                    .map(|(w, x)| w * x)
                    .sum::<f64>()
                    + b_true;
                let label = clean + noise_std * normal(&mut rng);
                samples.push(Sample { features, label });
            }
            let mut gt = w_true;
            gt.push(b_true);
            Ok(Dataset {
                samples,
                feature_dim: dim,
                classes: None,
                ground_truth: Some(gt),
            })
        }
    }
}

/// Uniform point in the ball of the given radius.
fn ball_point<R: Rng>(rng: &mut R, dim: usize, radius: f64) -> Vec<f64> {
    let mut v: Vec<f64> = (0..dim).map(|_| normal(rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    let r = radius * rng.gen::<f64>().powf(1.0 / dim as f64);
    for x in &mut v {
        *x *= r / norm;
    }
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartitionScheme {
    /// Uniformly random assignment, sizes balanced to within one sample.
    Iid,
    /// Sort by label, deal contiguous shards: devices see skewed label
    /// distributions.
    ShardByLabel,
}

/// Splits a dataset into `k` disjoint partitions covering every sample.
pub fn partition_dataset(
    dataset: &Dataset,
    k: usize,
    scheme: PartitionScheme,
    seed: u64,
) -> Result<Vec<DataPartition>> {
    if k == 0 {
        return Err(Error::invalid("k", "need at least one partition"));
    }
    if dataset.len() < k {
        return Err(Error::TooFewSamples {
            needed: k,
            got: dataset.len(),
        });
    }
    let n = dataset.len();
    let mut order: Vec<usize> = (0..n).collect();
    match scheme {
        PartitionScheme::Iid => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            order.shuffle(&mut rng);
        }
        PartitionScheme::ShardByLabel => {
            order.sort_by(|&a, &b| {
                dataset.samples[a]
                    .label
                    .partial_cmp(&dataset.samples[b].label)
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(a.cmp(&b))
            });
        }
    }
    let base = n / k;
    let extra = n % k;
    let mut parts = Vec::with_capacity(k);
    let mut cursor = 0;
    for owner in 0..k {
        let size = base + usize::from(owner < extra);
        let samples = order[cursor..cursor + size]
            .iter()
            .map(|&i| dataset.samples[i].clone())
            .collect();
        cursor += size;
        parts.push(DataPartition {
            owner: owner as u32,
            samples,
        });
    }
    Ok(parts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn synthetic_is_deterministic_per_seed() {
        let t = SynthTask::default_blobs();
        let a = make_synthetic_dataset(t, 50, 5, 9).unwrap();
        let b = make_synthetic_dataset(t, 50, 5, 9).unwrap();
        assert_eq!(a, b);
        let c = make_synthetic_dataset(t, 50, 5, 10).unwrap();
        let d = make_synthetic_dataset(t, 50, 5, 11).unwrap();
        assert_ne!(a, c);
        assert_ne!(c, d);
        assert_ne!(a, d);
    }

    #[test]
    fn blobs_are_separable_with_margin() {
        let margin = 0.2;
        let ds = make_synthetic_dataset(
            SynthTask::Blobs2Class {
                margin,
                radius: 3.0,
            },
            400,
            8,
            3,
        )
        .unwrap();
        let dir = ds.ground_truth.as_ref().unwrap();
        for s in &ds.samples {
            let proj: f64 = dir.iter().zip(&s.features).map(|(d, x)| d * x).sum();
            if s.label > 0.5 {
                assert!(proj >= margin - 1e-9, "class 1 point inside margin: {proj}");
                assert!(proj <= 2.0 * margin + 1e-9);
            } else {
                assert!(proj <= -margin + 1e-9, "class 0 point inside margin: {proj}");
                assert!(proj >= -2.0 * margin - 1e-9);
            }
        }
    }

    #[test]
    fn partition_covers_and_balances() {
        let ds = make_synthetic_dataset(SynthTask::default_blobs(), 103, 4, 5).unwrap();
        for k in [1usize, 2, 3, 7, 64] {
            for scheme in [PartitionScheme::Iid, PartitionScheme::ShardByLabel] {
                let parts = partition_dataset(&ds, k, scheme, 11).unwrap();
                assert_eq!(parts.len(), k);
                let total: usize = parts.iter().map(|p| p.len()).sum();
                assert_eq!(total, ds.len());
                let sizes: Vec<usize> = parts.iter().map(|p| p.len()).collect();
                let max = *sizes.iter().max().unwrap();
                let min = *sizes.iter().min().unwrap();
                assert!(max - min <= 1, "unbalanced: {sizes:?}");
                // disjoint + covering: match by full feature identity
                let mut seen: BTreeSet<String> = BTreeSet::new();
                for p in &parts {
                    for s in &p.samples {
                        let key = format!("{:?}", s.features);
                        assert!(seen.insert(key), "duplicate sample across partitions");
                    }
                }
                assert_eq!(seen.len(), ds.len());
            }
        }
    }

    #[test]
    fn single_partition_is_whole_dataset() {
        let ds = make_synthetic_dataset(SynthTask::default_linreg(), 20, 3, 1).unwrap();
        let parts = partition_dataset(&ds, 1, PartitionScheme::Iid, 0).unwrap();
        assert_eq!(parts[0].len(), ds.len());
    }

    #[test]
    fn equal_split_for_divisible_sizes() {
        let ds = make_synthetic_dataset(SynthTask::default_blobs(), 60_000, 2, 2).unwrap();
        let parts = partition_dataset(&ds, 4, PartitionScheme::Iid, 1).unwrap();
        for p in &parts {
            assert_eq!(p.len(), 15_000);
        }
    }

    #[test]
    fn shard_by_label_skews_labels() {
        let ds = make_synthetic_dataset(SynthTask::default_blobs(), 100, 3, 8).unwrap();
        let parts = partition_dataset(&ds, 2, PartitionScheme::ShardByLabel, 0).unwrap();
        // first shard all class 0, second all class 1 (balanced dataset)
        assert!(parts[0].samples.iter().all(|s| s.label < 0.5));
        assert!(parts[1].samples.iter().all(|s| s.label > 0.5));
    }

    #[test]
    fn too_few_samples_rejected() {
        let ds = make_synthetic_dataset(SynthTask::default_blobs(), 3, 2, 0).unwrap();
        assert!(matches!(
            partition_dataset(&ds, 4, PartitionScheme::Iid, 0),
            Err(Error::TooFewSamples { .. })
        ));
    }
}
