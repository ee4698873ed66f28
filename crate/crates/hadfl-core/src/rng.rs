//! Deterministic random streams.
//!
//! Every stochastic choice in the engine draws from a ChaCha stream seeded
//! through [`derive_seed`], so a (config, master seed) pair fully determines
//! a run. The derivation is part of the reproducibility contract: reference
//! implementations in tests replay device-local sampling by calling the same
//! function.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Labels for independent random streams derived from one master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    /// Synthetic dataset generation.
    Data,
    /// Dataset partitioning.
    Partition,
    /// Mini-batch sampling on a device in a given round.
    LocalTrain,
    /// Warm-up mini-batch sampling on a device.
    Warmup,
    /// Participant selection for a sync round.
    Selection,
    /// Ring order for a sync round.
    Ring,
    /// Group layout.
    Groups,
    /// Broadcaster choice for a sync round.
    Broadcast,
    /// Message latency jitter.
    Latency,
    /// Compute-time noise.
    ComputeNoise,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::Data => 1,
            Stream::Partition => 2,
            Stream::LocalTrain => 3,
            Stream::Warmup => 4,
            Stream::Selection => 5,
            Stream::Ring => 6,
            Stream::Groups => 7,
            Stream::Broadcast => 8,
            Stream::Latency => 9,
            Stream::ComputeNoise => 10,
        }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derives a sub-seed for (stream, device, round) from the master seed.
/// Stable across runs and platforms.
pub fn derive_seed(master: u64, stream: Stream, device: u32, round: u64) -> u64 {
    let mut s = splitmix64(master);
    s = splitmix64(s ^ stream.tag());
    s = splitmix64(s ^ u64::from(device));
    splitmix64(s ^ round)
}

/// Seeded ChaCha stream for a (stream, device, round) triple.
pub fn stream_rng(master: u64, stream: Stream, device: u32, round: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, stream, device, round))
}

/// Standard normal draw via Box-Muller. Deterministic given the generator
/// state; avoids depending on distribution crates whose sampling algorithms
/// may change between releases.
pub fn normal<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let u1: f64 = rng.gen::<f64>();
        if u1 <= f64::MIN_POSITIVE {
            continue;
        }
        let u2: f64 = rng.gen::<f64>();
        return (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
    }
}
