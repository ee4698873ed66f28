//! Per-device version forecasting by double exponential smoothing.
//!
//! The runtime supervisor observes each device's parameter version once per
//! sync round and forecasts the next rounds with Brown's method:
//!
//! ```text
//! s1_j = alpha * v_j + (1 - alpha) * s1_{j-1}
//! s2_j = alpha * s1_j + (1 - alpha) * s2_{j-1}
//! a_j  = 2 * s1_j - s2_j
//! b_j  = alpha / (1 - alpha) * (s1_j - s2_j)
//! forecast(m) = a_j + b_j * m
//! ```

use crate::error::{Error, Result};

/// Smoothing state for one device. Updates are value-style: `observe`
/// consumes nothing and mutates in place; the struct is cheap to copy
/// around between coordinator snapshots.
#[derive(Debug, Clone, PartialEq)]
pub struct VersionTracker {
    alpha: f64,
    /// Most recent observed version.
    v_last: f64,
    /// First-order smoothed value.
    s1: f64,
    /// Second-order smoothed value.
    s2: f64,
    /// Observation count.
    round: u64,
}

impl VersionTracker {
    /// Seeds both smoothing orders at `v0` so the trend starts at zero and
    /// the first forecast equals `v0`.
    pub fn init(alpha: f64, v0: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::invalid("alpha", "must lie strictly in (0, 1)"));
        }
        if !v0.is_finite() {
            return Err(Error::NonFinite {
                context: "tracker seed",
            });
        }
        Ok(VersionTracker {
            alpha,
            v_last: v0,
            s1: v0,
            s2: v0,
            round: 0,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn last_observed(&self) -> f64 {
        self.v_last
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn smoothed(&self) -> (f64, f64) {
        (self.s1, self.s2)
    }

    /// Folds one observed version into the smoothing state.
    pub fn observe(&mut self, v: f64) {
        self.s1 = self.alpha * v + (1.0 - self.alpha) * self.s1;
        self.s2 = self.alpha * self.s1 + (1.0 - self.alpha) * self.s2;
        self.v_last = v;
        self.round += 1;
    }

    /// Forecast `m` rounds ahead: `a + b * m`.
    pub fn predict(&self, m: u32) -> f64 {
        let a = 2.0 * self.s1 - self.s2;
        let b = self.alpha / (1.0 - self.alpha) * (self.s1 - self.s2);
        a + b * f64::from(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct transcription of the smoothing recurrences, kept separate
    /// from the tracker so the two can disagree.
    struct RecurrenceOracle {
        alpha: f64,
        s1: f64,
        s2: f64,
    }

    impl RecurrenceOracle {
        fn new(alpha: f64, v0: f64) -> Self {
            RecurrenceOracle { alpha, s1: v0, s2: v0 }
        }
        fn observe(&mut self, v: f64) {
            let s1 = self.alpha * v + (1.0 - self.alpha) * self.s1;
            let s2 = self.alpha * s1 + (1.0 - self.alpha) * self.s2;
            self.s1 = s1;
            self.s2 = s2;
        }
        fn predict(&self, m: f64) -> f64 {
            let a = 2.0 * self.s1 - self.s2;
            let b = self.alpha / (1.0 - self.alpha) * (self.s1 - self.s2);
            a + b * m
        }
    }

    #[test]
    fn init_rejects_bad_alpha() {
        assert!(VersionTracker::init(1.1, 0.0).is_err());
        assert!(VersionTracker::init(0.0, 0.0).is_err());
        assert!(VersionTracker::init(1.0, 0.0).is_err());
        assert!(VersionTracker::init(0.5, 10.0).is_ok());
    }

    #[test]
    fn hand_run_example() {
        let mut tr = VersionTracker::init(0.5, 10.0).unwrap();
        assert_eq!(tr.smoothed(), (10.0, 10.0));
        // before any observation the forecast is the seed itself
        assert_eq!(tr.predict(1), 10.0);
        assert_eq!(tr.predict(7), 10.0);
        tr.observe(12.0);
        let (s1, s2) = tr.smoothed();
        assert_eq!(s1, 11.0);
        assert_eq!(s2, 10.5);
        // a = 11.5, b = 0.5
        assert_eq!(tr.predict(1), 12.0);
    }

    #[test]
    fn constant_series_is_fixed_point() {
        let mut tr = VersionTracker::init(0.3, 4.0).unwrap();
        for _ in 0..50 {
            tr.observe(4.0);
        }
        for m in 1..10 {
            assert_eq!(tr.predict(m), 4.0);
        }
        assert_eq!(tr.round(), 50);
    }

    #[test]
    fn matches_recurrence_oracle_over_random_sequences() {
        use rand::Rng;
        use rand_chacha::rand_core::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(555);
        for _ in 0..25 {
            let alpha = rng.gen_range(0.05..0.95);
            let v0 = rng.gen_range(-100.0..100.0);
            let mut tr = VersionTracker::init(alpha, v0).unwrap();
            let mut oracle = RecurrenceOracle::new(alpha, v0);
            for _ in 0..1000 {
                let v = rng.gen_range(-1000.0..1000.0);
                tr.observe(v);
                oracle.observe(v);
                let (s1, s2) = tr.smoothed();
                assert!((s1 - oracle.s1).abs() <= 1e-12 * s1.abs().max(1.0));
                assert!((s2 - oracle.s2).abs() <= 1e-12 * s2.abs().max(1.0));
                let m = rng.gen_range(1..5u32);
                let p = tr.predict(m);
                let q = oracle.predict(f64::from(m));
                assert!((p - q).abs() <= 1e-12 * p.abs().max(1.0));
            }
        }
    }

    #[test]
    fn prediction_is_linear_in_horizon() {
        let mut tr = VersionTracker::init(0.4, 1.0).unwrap();
        for v in [2.0, 5.0, 7.0, 8.5] {
            tr.observe(v);
        }
        let b = tr.predict(2) - tr.predict(1);
        for (m1, m2) in [(1u32, 4u32), (3, 9), (2, 10)] {
            let diff = tr.predict(m2) - tr.predict(m1);
            assert!((diff - b * f64::from(m2 - m1)).abs() < 1e-12);
        }
    }

    #[test]
    fn ramp_error_decays_with_ratio_one_minus_alpha() {
        // On v_j = c + d*j the one-step forecast error shrinks geometrically
        // with base (1 - alpha). The polynomial prefactor washes out in the
        // windowed geometric rate.
        // the transient has a j * (1-alpha)^j term, so the windowed rate
        // carries a (hi/lo)^(1/(hi-lo)) correction; windows are chosen where
        // that correction sits well inside the 5% band and the error is
        // still far above float noise
        for (alpha, lo, hi) in [(0.2, 30usize, 60usize), (0.5, 16, 40)] {
            let (c, d) = (3.0, 5.0);
            let mut tr = VersionTracker::init(alpha, c).unwrap();
            let mut errors = Vec::new();
            for j in 0..70u32 {
                let v = c + d * f64::from(j + 1);
                let e = (tr.predict(1) - v).abs();
                errors.push(e);
                tr.observe(v);
            }
            let rate = (errors[hi] / errors[lo]).powf(1.0 / (hi - lo) as f64);
            let target = 1.0 - alpha;
            assert!(
                (rate - target).abs() <= 0.05 * target,
                "alpha={alpha}: rate {rate} vs {target}"
            );
            assert!(errors[hi] < errors[lo] / 8.0, "alpha={alpha}: no decay");
        }
    }

    #[test]
    fn shift_and_scale_equivariance() {
        use rand::Rng;
        use rand_chacha::rand_core::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(777);
        let series: Vec<f64> = (0..100).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let (shift, scale) = (13.5, 3.0);

        let mut base = VersionTracker::init(0.35, series[0]).unwrap();
        let mut shifted = VersionTracker::init(0.35, series[0] + shift).unwrap();
        let mut scaled = VersionTracker::init(0.35, series[0] * scale).unwrap();
        for &v in &series {
            base.observe(v);
            shifted.observe(v + shift);
            scaled.observe(v * scale);
        }
        for m in 1..5u32 {
            let p = base.predict(m);
            assert!((shifted.predict(m) - (p + shift)).abs() < 1e-12 * p.abs().max(1.0));
            assert!((scaled.predict(m) - p * scale).abs() < 1e-12 * (p * scale).abs().max(1.0));
        }
    }
}
