use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// A counter-based random substream.
///
/// The pair `(seed, stream_id)` selects a ChaCha8 key and stream, so the
/// sequence drawn for a given pair never depends on how many other streams
/// exist or which thread consumes them. Normals come from the Ziggurat
/// transform of `rand_distr::StandardNormal`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RandomStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RandomStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }

    /// Child stream `index` of this stream. Children of different parents
    /// use different keys.
    pub fn substream(&self, index: u64) -> Self {
        Self {
            seed: splitmix64(self.seed ^ splitmix64(self.stream_id.wrapping_add(0x9e37_79b9))),
            stream_id: index,
        }
    }
}

/// SplitMix64 finalizer, used to derive keys.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn standard_normal(stream: RandomStream, n: usize) -> Vec<f64> {
    let mut rng = stream.rng();
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}
