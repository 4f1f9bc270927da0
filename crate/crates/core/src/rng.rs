use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Seed plus stream id for deterministic RNG substreams.
///
/// Every random draw in the crate comes from [`RngSeed::substream`], keyed by
/// `(seed, stream, h, n, i)`, so results never depend on scheduling order or
/// worker count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngSeed {
    pub seed: u64,
    pub stream: u64,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngSeed {
    pub fn new(seed: u64) -> Self {
        RngSeed { seed, stream: 0 }
    }

    pub fn with_stream(self, stream: u64) -> Self {
        RngSeed { stream, ..self }
    }

    /// 64-bit substream id: splitmix64 folded over `seed, stream, h, n, i`.
    pub fn substream_id(&self, h: u64, n: u64, i: u64) -> u64 {
        [self.stream, h, n, i]
            .into_iter()
            .fold(splitmix64(self.seed), |acc, x| splitmix64(acc ^ x))
    }

    pub fn substream(&self, h: u64, n: u64, i: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.substream_id(h, n, i))
    }

    pub fn rng(&self) -> ChaCha8Rng {
        self.substream(0, 0, 0)
    }
}

impl Default for RngSeed {
    fn default() -> Self {
        RngSeed::new(0)
    }
}
