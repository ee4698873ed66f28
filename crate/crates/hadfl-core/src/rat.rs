//! Exact rational arithmetic for virtual time.
//!
//! The simulator's clock, per-epoch training times and the hyperperiod are
//! all held as exact rationals so that schedule divisibility holds without
//! float drift. Only model parameters use floating point.

use num_integer::Integer;
use num_rational::Ratio;
use num_traits::{Signed, ToPrimitive, Zero};

/// Exact rational, the unit of all virtual-time arithmetic.
pub type Rat = Ratio<i128>;

/// Micro-second quantum used when converting configured float durations
/// (latency, failure times) into exact rationals.
pub const MICRO: i128 = 1_000_000;

pub fn rat(n: i128, d: i128) -> Rat {
    Ratio::new(n, d)
}

pub fn rat_int(n: i128) -> Rat {
    Ratio::from_integer(n)
}

pub fn to_f64(r: Rat) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

/// Rounds `x` to the nearest multiple of `quantum` (ties away from zero).
/// Positive inputs are clamped to at least one quantum so a measured time
/// never quantizes to zero.
pub fn quantize(x: Rat, quantum: Rat) -> Rat {
    assert!(quantum > Rat::zero(), "quantum must be positive");
    let steps = (x / quantum).round();
    let steps = if x > Rat::zero() && steps.is_zero() {
        Rat::from_integer(1)
    } else {
        steps
    };
    steps * quantum
}

/// Converts a non-negative float duration (seconds) to an exact rational on
/// the micro-second grid. Used only at config-parse time.
pub fn from_seconds_f64(secs: f64) -> Rat {
    assert!(secs.is_finite() && secs >= 0.0, "duration must be finite and non-negative");
    let micros = (secs * MICRO as f64).round() as i128;
    Ratio::new(micros, MICRO)
}

/// Least common multiple of two rationals: reduce both, then
/// `lcm(numerators) / gcd(denominators)`. The result is an exact multiple
/// of both inputs.
pub fn lcm_rat(a: Rat, b: Rat) -> Rat {
    assert!(a.is_positive() && b.is_positive(), "lcm is defined for positive rationals");
    let n = a.numer().lcm(b.numer());
    let d = a.denom().gcd(b.denom());
    Ratio::new(n, d)
}

/// LCM over a non-empty set of positive rationals.
pub fn lcm_rats(values: &[Rat]) -> Rat {
    assert!(!values.is_empty(), "lcm over empty set");
    values.iter().copied().fold(values[0], lcm_rat)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantize_rounds_to_grid() {
        let q = rat(1, 100);
        // 0.3334 s with a 1/100 s quantum -> 33/100
        assert_eq!(quantize(rat(3334, 10_000), q), rat(33, 100));
        // exactly half a step rounds away from zero: 0.335 -> 34/100
        assert_eq!(quantize(rat(335, 1000), q), rat(34, 100));
        // tiny positive values clamp to one quantum
        assert_eq!(quantize(rat(1, 1_000_000), q), q);
    }

    #[test]
    fn lcm_of_power_ratios() {
        // epoch times for a 4:2:1 power ratio
        let times = [rat(1, 4), rat(1, 2), rat_int(1)];
        assert_eq!(lcm_rats(&times), rat_int(1));
        // 3:3:1:1
        let times = [rat(1, 3), rat(1, 3), rat_int(1), rat_int(1)];
        assert_eq!(lcm_rats(&times), rat_int(1));
        // singleton
        assert_eq!(lcm_rats(&[rat(7, 5)]), rat(7, 5));
    }

    #[test]
    fn lcm_divides_exactly() {
        let times = [rat(3, 10), rat(7, 10), rat(1, 2)];
        let h = lcm_rats(&times);
        for t in times {
            let q = h / t;
            assert!(q.is_integer(), "{h} not divisible by {t}");
        }
    }

    #[test]
    fn seconds_conversion_is_exact_on_micro_grid() {
        assert_eq!(from_seconds_f64(0.001), rat(1, 1000));
        assert_eq!(from_seconds_f64(1.5), rat(3, 2));
        assert_eq!(from_seconds_f64(0.0), Rat::zero());
    }
}
