//! Partial model aggregation and the broadcast-integration rule.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::ParamVector;
use crate::DeviceId;

/// Weighted mean over the contributing models. Normalization is by the sum
/// of contributor weights, not the cluster size: averaging over selected
/// devices must preserve parameter scale.
pub fn partial_aggregate(models: &BTreeMap<DeviceId, (ParamVector, f64)>) -> Result<ParamVector> {
    let mut iter = models.values();
    let first = iter
        .next()
        .ok_or_else(|| Error::invalid("models", "empty contribution set"))?;
    let dim = first.0.dim();
    let mut sum = vec![0.0; dim];
    let mut total_weight = 0.0;
    for (params, weight) in models.values() {
        params.check_dim(&first.0)?;
        if !(*weight > 0.0) {
            return Err(Error::invalid("weight", "must be positive"));
        }
        for (s, v) in sum.iter_mut().zip(params.as_slice()) {
            *s += weight * v;
        }
        total_weight += weight;
    }
    for s in &mut sum {
        *s /= total_weight;
    }
    ParamVector::from_values(sum)
}

/// `(1 - beta) * local + beta * global`: how an unselected device folds a
/// broadcast model into its own.
pub fn integrate_received(
    local: &ParamVector,
    global: &ParamVector,
    beta: f64,
) -> Result<ParamVector> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::invalid("beta", "must lie in [0, 1]"));
    }
    local.blend(global, beta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn models(entries: &[(DeviceId, Vec<f64>)]) -> BTreeMap<DeviceId, (ParamVector, f64)> {
        entries
            .iter()
            .map(|(id, v)| (*id, (ParamVector::from_values(v.clone()).unwrap(), 1.0)))
            .collect()
    }

    #[test]
    fn mean_of_two() {
        let m = models(&[(0, vec![2.0]), (1, vec![4.0])]);
        assert_eq!(partial_aggregate(&m).unwrap().as_slice(), &[3.0]);
    }

    #[test]
    fn single_contributor_is_identity() {
        let m = models(&[(5, vec![1.0, -2.0, 0.5])]);
        assert_eq!(partial_aggregate(&m).unwrap().as_slice(), &[1.0, -2.0, 0.5]);
    }

    #[test]
    fn matches_direct_mean_on_random_vectors() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let dim = 100;
        let k = 8;
        let vecs: Vec<Vec<f64>> = (0..k)
            .map(|_| (0..dim).map(|_| rng.gen_range(-10.0..10.0)).collect())
            .collect();
        let m = models(
            &vecs
                .iter()
                .enumerate()
                .map(|(i, v)| (i as DeviceId, v.clone()))
                .collect::<Vec<_>>(),
        );
        let got = partial_aggregate(&m).unwrap();
        for j in 0..dim {
            let direct: f64 = vecs.iter().map(|v| v[j]).sum::<f64>() / k as f64;
            let rel = (got.as_slice()[j] - direct).abs() / direct.abs().max(1e-9);
            assert!(rel <= 1e-12, "component {j}");
        }
    }

    #[test]
    fn weighted_mean() {
        let mut m = BTreeMap::new();
        m.insert(0, (ParamVector::from_values(vec![0.0]).unwrap(), 1.0));
        m.insert(1, (ParamVector::from_values(vec![4.0]).unwrap(), 3.0));
        assert_eq!(partial_aggregate(&m).unwrap().as_slice(), &[3.0]);
    }

    #[test]
    fn empty_and_mismatched_rejected() {
        assert!(partial_aggregate(&BTreeMap::new()).is_err());
        let mut m = models(&[(0, vec![1.0, 2.0])]);
        m.insert(1, (ParamVector::from_values(vec![1.0]).unwrap(), 1.0));
        assert!(partial_aggregate(&m).is_err());
    }

    #[test]
    fn integration_endpoints_and_midpoint() {
        let local = ParamVector::from_values(vec![0.0]).unwrap();
        let global = ParamVector::from_values(vec![2.0]).unwrap();
        assert_eq!(
            integrate_received(&local, &global, 1.0).unwrap().as_slice(),
            &[2.0]
        );
        assert_eq!(
            integrate_received(&local, &global, 0.0).unwrap().as_slice(),
            &[0.0]
        );
        assert_eq!(
            integrate_received(&local, &global, 0.5).unwrap().as_slice(),
            &[1.0]
        );
        assert!(integrate_received(&local, &global, 1.5).is_err());
    }
}
