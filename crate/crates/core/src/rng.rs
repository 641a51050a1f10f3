//! Deterministic, splittable random number streams.
//!
//! Every source of randomness in the crate is addressed by a `(seed,
//! stream_id)` pair. The pair fully determines the draw sequence, so work
//! scheduled across threads can hand each unit its own stream and reproduce
//! results regardless of execution order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Handle to one deterministic draw stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

// splitmix64 finalizer; decorrelates derived stream ids.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        RngStream { seed, stream_id }
    }

    /// Root stream for a run seed.
    pub fn root(seed: u64) -> Self {
        RngStream { seed, stream_id: 0 }
    }

    /// Derives a child stream. Children with distinct tags are independent,
    /// and derivation itself draws nothing.
    pub fn substream(&self, tag: u64) -> RngStream {
        RngStream {
            seed: self.seed,
            stream_id: mix(self.stream_id ^ mix(tag)),
        }
    }

    /// Instantiates the generator positioned at the start of the stream.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

/// Samples a standard normal deviate scaled to `mean`/`sd`.
pub fn normal(rng: &mut ChaCha8Rng, mean: f64, sd: f64) -> f64 {
    Normal::new(mean, sd).expect("valid normal params").sample(rng)
}

/// Uniform draw from `[lo, hi)`.
pub fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.gen_range(lo..hi)
}
