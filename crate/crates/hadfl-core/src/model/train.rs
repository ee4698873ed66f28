//! Mini-batch SGD primitives: gradients, steps, the seeded local-training
//! loop, and evaluation.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::data::{DataPartition, Sample};
use crate::model::spec::ModelSpec;
use crate::model::vector::ParamVector;

/// Mini-batch hyper-parameters. `warmup_lr` applies during the
/// mutual-negotiation phase only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperParams {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub warmup_lr: f64,
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning_rate", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be at least 1"));
        }
        if !(self.warmup_lr > 0.0) || self.warmup_lr > self.learning_rate {
            return Err(Error::invalid(
                "warmup_lr",
                "must be positive and at most learning_rate",
            ));
        }
        Ok(())
    }

    /// Hyper-parameters for the warm-up phase: same batch size, small rate.
    pub fn for_warmup(&self) -> HyperParams {
        HyperParams {
            learning_rate: self.warmup_lr,
            ..*self
        }
    }

    /// SGD iterations per local epoch on a partition of `n_k` samples.
    pub fn iters_per_epoch(&self, n_k: usize) -> u64 {
        ((n_k + self.batch_size - 1) / self.batch_size) as u64
    }
}

/// Mean gradient `(1/|batch|) sum grad f(x_i, w)` over a non-empty batch.
pub fn compute_gradient(w: &ParamVector, spec: &ModelSpec, batch: &[Sample]) -> Result<ParamVector> {
    if batch.is_empty() {
        return Err(Error::invalid("batch", "must be non-empty"));
    }
    let mut grad = vec![0.0; spec.param_count()];
    let mut loss_sum = 0.0;
    for s in batch {
        loss_sum += spec.accumulate_gradient(w, s, &mut grad)?;
    }
    if !loss_sum.is_finite() {
        return Err(Error::NonFinite { context: "batch loss" });
    }
    let inv = 1.0 / batch.len() as f64;
    for g in &mut grad {
        *g *= inv;
    }
    ParamVector::from_values(grad)
}

/// One SGD update `w - lr * g`.
pub fn sgd_step(w: &ParamVector, g: &ParamVector, lr: f64) -> Result<ParamVector> {
    if !(lr >= 0.0) {
        return Err(Error::invalid("lr", "must be non-negative"));
    }
    w.step(g, lr)
}

/// Runs exactly `steps` mini-batch SGD iterations, sampling batches with
/// replacement from the partition using a generator seeded by `rng_seed`.
/// Returns the updated parameters and the iteration count performed.
pub fn local_train(
    w: &ParamVector,
    spec: &ModelSpec,
    partition: &DataPartition,
    steps: u64,
    hp: &HyperParams,
    rng_seed: u64,
) -> Result<(ParamVector, u64)> {
    if steps == 0 {
        return Err(Error::invalid("steps", "must be at least 1"));
    }
    if partition.is_empty() {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut current = w.clone();
    let n = partition.len();
    let mut batch: Vec<Sample> = Vec::with_capacity(hp.batch_size);
    for _ in 0..steps {
        batch.clear();
        for _ in 0..hp.batch_size {
            let idx = rng.gen_range(0..n);
            batch.push(partition.samples[idx].clone());
        }
        let g = compute_gradient(&current, spec, &batch)?;
        current = sgd_step(&current, &g, hp.learning_rate)?;
    }
    Ok((current, steps))
}

/// Mean loss over the dataset plus accuracy (classification) or 0.0
/// (regression).
pub fn evaluate(w: &ParamVector, spec: &ModelSpec, samples: &[Sample]) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::invalid("dataset", "must be non-empty"));
    }
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    let mut classify = false;
    for s in samples {
        loss_sum += spec.sample_loss(w, s)?;
        let z = spec.forward(w, &s.features)?;
        if let Some(pred) = spec.predict_class(&z) {
            classify = true;
            if pred == s.label as usize {
                correct += 1;
            }
        }
    }
    let loss = loss_sum / samples.len() as f64;
    let accuracy = if classify {
        correct as f64 / samples.len() as f64
    } else {
        0.0
    };
    Ok((loss, accuracy))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::data::{make_synthetic_dataset, SynthTask};
    use crate::model::spec::{LossKind, ModelKind};
    use crate::rng::normal;

    fn sample(features: Vec<f64>, label: f64) -> Sample {
        Sample { features, label }
    }

    fn random_w(spec: &ModelSpec, rng: &mut ChaCha8Rng) -> ParamVector {
        ParamVector::from_values((0..spec.param_count()).map(|_| 0.5 * normal(rng)).collect())
            .unwrap()
    }

    fn random_batch(spec: &ModelSpec, rng: &mut ChaCha8Rng, size: usize) -> Vec<Sample> {
        (0..size)
            .map(|_| {
                let features = (0..spec.input_dim).map(|_| normal(rng)).collect();
                let label = match spec.loss {
                    LossKind::SquaredError => normal(rng),
                    LossKind::CrossEntropy => (rng.gen_range(0..spec.output_dim)) as f64,
                };
                sample(features, label)
            })
            .collect()
    }

    fn batch_loss(w: &ParamVector, spec: &ModelSpec, batch: &[Sample]) -> f64 {
        batch
            .iter()
            .map(|s| spec.sample_loss(w, s).unwrap())
            .sum::<f64>()
            / batch.len() as f64
    }

    /// Central finite difference oracle with step 1e-6.
    fn finite_difference(w: &ParamVector, spec: &ModelSpec, batch: &[Sample]) -> Vec<f64> {
        let h = 1e-6;
        let mut fd = Vec::with_capacity(w.dim());
        for i in 0..w.dim() {
            let mut plus = w.clone();
            plus.as_mut_slice()[i] += h;
            let mut minus = w.clone();
            minus.as_mut_slice()[i] -= h;
            fd.push((batch_loss(&plus, spec, batch) - batch_loss(&minus, spec, batch)) / (2.0 * h));
        }
        fd
    }

    #[test]
    fn gradient_matches_finite_differences_all_kinds() {
        let specs = [
            ModelSpec::linear_regression(4),
            ModelSpec::logistic_regression(4),
            ModelSpec::mlp(3, 5, 2, LossKind::CrossEntropy),
            ModelSpec::mlp(3, 4, 1, LossKind::SquaredError),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        for spec in &specs {
            let draws = 100 / specs.len() + 1;
            for _ in 0..draws {
                let w = random_w(spec, &mut rng);
                let batch = random_batch(spec, &mut rng, 3);
                let g = compute_gradient(&w, spec, &batch).unwrap();
                let fd = finite_difference(&w, spec, &batch);
                for (a, b) in g.as_slice().iter().zip(&fd) {
                    let scale = a.abs().max(b.abs()).max(1e-3);
                    assert!(
                        (a - b).abs() / scale <= 1e-4,
                        "{:?}: analytic {a} vs fd {b}",
                        spec.kind
                    );
                }
            }
        }
    }

    #[test]
    fn zero_residual_gives_zero_gradient() {
        // zero weights, zero target: residual is zero everywhere
        let spec = ModelSpec::linear_regression(2);
        let w = ParamVector::zeros(spec.param_count());
        let batch = [sample(vec![1.0, 0.0], 0.0)];
        let g = compute_gradient(&w, &spec, &batch).unwrap();
        assert!(g.as_slice().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn symmetric_batch_zeroes_bias_gradient() {
        let spec = ModelSpec::logistic_regression(3);
        let w = ParamVector::zeros(spec.param_count());
        let batch = [
            sample(vec![1.0, -2.0, 0.5], 1.0),
            sample(vec![-1.0, 2.0, -0.5], 0.0),
        ];
        let g = compute_gradient(&w, &spec, &batch).unwrap();
        let bias_grad = g.as_slice()[spec.param_count() - 1];
        assert!(
            bias_grad.abs() < 1e-15,
            "bias gradient should vanish: {bias_grad}"
        );
    }

    #[test]
    fn sgd_step_examples() {
        let w = ParamVector::from_values(vec![1.0]).unwrap();
        let g = ParamVector::from_values(vec![2.0]).unwrap();
        assert!((sgd_step(&w, &g, 0.1).unwrap().as_slice()[0] - 0.8).abs() < 1e-15);
        // lr = 0 leaves w unchanged
        assert_eq!(sgd_step(&w, &g, 0.0).unwrap(), w);
        // zero gradient is a fixed point
        let z = ParamVector::zeros(1);
        assert_eq!(sgd_step(&w, &z, 0.3).unwrap(), w);
    }

    #[test]
    fn sgd_step_split_identity() {
        // for fixed g: (w - a*g) - b*g == w - (a+b)*g
        let w = ParamVector::from_values(vec![1.0, -2.0, 0.25]).unwrap();
        let g = ParamVector::from_values(vec![0.5, 1.5, -3.0]).unwrap();
        let (a, b) = (0.125, 0.25); // exact in binary floating point
        let two_steps = sgd_step(&sgd_step(&w, &g, a).unwrap(), &g, b).unwrap();
        let one_step = sgd_step(&w, &g, a + b).unwrap();
        assert_eq!(two_steps, one_step);
    }

    #[test]
    fn local_train_single_step_is_gradient_plus_step() {
        let spec = ModelSpec::logistic_regression(4);
        let ds = make_synthetic_dataset(SynthTask::default_blobs(), 64, 4, 3).unwrap();
        let part = DataPartition {
            owner: 0,
            samples: ds.samples.clone(),
        };
        let hp = HyperParams {
            learning_rate: 0.1,
            batch_size: 8,
            warmup_lr: 0.1,
        };
        let w0 = ParamVector::zeros(spec.param_count());
        let (w1, done) = local_train(&w0, &spec, &part, 1, &hp, 99).unwrap();
        assert_eq!(done, 1);
        // replay the same batch sampling by hand
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let batch: Vec<Sample> = (0..hp.batch_size)
            .map(|_| part.samples[rng.gen_range(0..part.len())].clone())
            .collect();
        let g = compute_gradient(&w0, &spec, &batch).unwrap();
        let expect = sgd_step(&w0, &g, hp.learning_rate).unwrap();
        assert_eq!(w1, expect);
    }

    #[test]
    fn local_train_zero_steps_rejected() {
        let spec = ModelSpec::linear_regression(2);
        let part = DataPartition {
            owner: 0,
            samples: vec![sample(vec![0.0, 0.0], 0.0)],
        };
        let hp = HyperParams {
            learning_rate: 0.1,
            batch_size: 1,
            warmup_lr: 0.1,
        };
        let w = ParamVector::zeros(spec.param_count());
        assert!(local_train(&w, &spec, &part, 0, &hp, 0).is_err());
    }

    #[test]
    fn local_train_descends_on_convex_task() {
        let spec = ModelSpec::logistic_regression(6);
        let hp = HyperParams {
            learning_rate: 0.05,
            batch_size: 16,
            warmup_lr: 0.05,
        };
        let mut descended = 0;
        for seed in 0..100u64 {
            let ds = make_synthetic_dataset(SynthTask::default_blobs(), 256, 6, seed).unwrap();
            let part = DataPartition {
                owner: 0,
                samples: ds.samples.clone(),
            };
            let w0 = ParamVector::zeros(spec.param_count());
            let (loss_in, _) = evaluate(&w0, &spec, &part.samples).unwrap();
            let (w1, _) = local_train(&w0, &spec, &part, 50, &hp, seed ^ 0xabc).unwrap();
            let (loss_out, _) = evaluate(&w1, &spec, &part.samples).unwrap();
            if loss_out <= loss_in {
                descended += 1;
            }
        }
        assert_eq!(descended, 100, "descent failed on {} runs", 100 - descended);
    }

    #[test]
    fn local_train_is_deterministic() {
        let spec = ModelSpec::logistic_regression(4);
        let ds = make_synthetic_dataset(SynthTask::default_blobs(), 128, 4, 17).unwrap();
        let part = DataPartition {
            owner: 0,
            samples: ds.samples,
        };
        let hp = HyperParams {
            learning_rate: 0.1,
            batch_size: 8,
            warmup_lr: 0.1,
        };
        let w0 = ParamVector::zeros(spec.param_count());
        let (a, _) = local_train(&w0, &spec, &part, 25, &hp, 5).unwrap();
        let (b, _) = local_train(&w0, &spec, &part, 25, &hp, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn evaluate_perfect_separator() {
        let spec = ModelSpec::logistic_regression(2);
        // decision boundary x0 = 0, strong weight
        let w = ParamVector::from_values(vec![10.0, 0.0, 0.0]).unwrap();
        let samples = [
            sample(vec![1.0, 0.3], 1.0),
            sample(vec![2.0, -0.4], 1.0),
            sample(vec![-1.0, 0.2], 0.0),
            sample(vec![-3.0, 1.0], 0.0),
        ];
        let (_, acc) = evaluate(&w, &spec, &samples).unwrap();
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn evaluate_zero_weights_on_balanced_set_is_chance() {
        let spec = ModelSpec::logistic_regression(3);
        let ds = make_synthetic_dataset(SynthTask::default_blobs(), 200, 3, 4).unwrap();
        let w = ParamVector::zeros(spec.param_count());
        let (_, acc) = evaluate(&w, &spec, &ds.samples).unwrap();
        assert!((0.4..=0.6).contains(&acc), "accuracy {acc}");
    }

    #[test]
    fn evaluate_loss_matches_per_sample_mean() {
        let spec = ModelSpec::mlp(3, 4, 2, LossKind::CrossEntropy);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let w = random_w(&spec, &mut rng);
        let batch = random_batch(&spec, &mut rng, 13);
        let (loss, _) = evaluate(&w, &spec, &batch).unwrap();
        let direct: f64 = batch
            .iter()
            .map(|s| spec.sample_loss(&w, s).unwrap())
            .sum::<f64>()
            / batch.len() as f64;
        assert!((loss - direct).abs() < 1e-12);
    }

    #[test]
    fn regression_accuracy_reported_as_zero() {
        let spec = ModelSpec::linear_regression(2);
        let w = ParamVector::zeros(spec.param_count());
        let samples = [sample(vec![1.0, 2.0], 0.5)];
        let (_, acc) = evaluate(&w, &spec, &samples).unwrap();
        assert_eq!(acc, 0.0);
    }
}
