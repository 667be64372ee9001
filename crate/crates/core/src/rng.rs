//! Seeded random streams.
//!
//! Every stochastic step draws from its own ChaCha stream keyed by a base
//! seed and a stream index, so results do not depend on which thread runs
//! which pass or in what order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Identifies one independent random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct StreamId {
    pub seed: u64,
    pub index: u64,
}

impl StreamId {
    pub fn new(seed: u64, index: u64) -> Self {
        Self { seed, index }
    }

    pub fn rng(self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.index);
        rng
    }
}

/// SplitMix64 finalizer; used to derive child seeds from a parent seed and a key.
pub fn mix(seed: u64, key: u64) -> u64 {
    let mut z = seed ^ key.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for a labelled purpose (e.g. "split", "init").
pub fn derive(seed: u64, label: &str, index: u64) -> u64 {
    let label_key = label
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325_u64, |h, b| (h ^ u64::from(b)).wrapping_mul(0x100_0000_01b3));
    mix(mix(seed, label_key), index)
}
