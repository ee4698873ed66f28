//! Message latency model: base + per-byte cost + uniform jitter, all exact
//! rationals on the micro-second grid.

use rand::Rng;

use crate::rat::{rat, rat_int, Rat, MICRO};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatencyModel {
    pub base: Rat,
    /// Uniform half-width; draws land on the micro-second grid so virtual
    /// time stays rational.
    pub jitter: Rat,
    pub per_byte: Rat,
}

impl LatencyModel {
    pub fn fixed(base: Rat) -> Self {
        LatencyModel {
            base,
            jitter: rat_int(0),
            per_byte: rat_int(0),
        }
    }

    /// Modeled one-way delay for a message of `len` bytes. Never negative.
    pub fn delay<R: Rng>(&self, len: usize, rng: &mut R) -> Rat {
        let mut d = self.base + self.per_byte * rat_int(len as i128);
        if self.jitter > rat_int(0) {
            let steps = (self.jitter * rat_int(MICRO)).to_integer();
            if steps > 0 {
                let k = rng.gen_range(-steps..=steps);
                d += rat(k, MICRO);
            }
        }
        if d < rat_int(0) {
            rat_int(0)
        } else {
            d
        }
    }
}
