//! Counter-based random streams.
//!
//! Every stochastic oracle call is keyed by `(seed, worker, iteration, oracle)`.
//! The key is expanded into a ChaCha8 seed, so the stream for one call does not
//! depend on how many draws any other worker or iteration consumed. Serial and
//! parallel schedules therefore see the same numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Which oracle family a key feeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum OracleTag {
    /// Inner-level sample `xi`.
    Inner = 1,
    /// Outer-level sample `zeta`.
    Outer = 2,
    /// Instance construction (parameters, data shuffles).
    Build = 3,
}

/// Key of one oracle draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NoiseKey {
    pub seed: u64,
    pub worker: u64,
    pub iter: u64,
    pub tag: OracleTag,
}

impl NoiseKey {
    pub fn new(seed: u64, worker: usize, iter: u64, tag: OracleTag) -> Self {
        Self {
            seed,
            worker: worker as u64,
            iter,
            tag,
        }
    }

    /// Same key with a different oracle tag.
    pub fn with_tag(self, tag: OracleTag) -> Self {
        Self { tag, ..self }
    }

    /// Independent sub-stream `lane` of this key. Oracles that need several
    /// unrelated draws (value noise, Jacobian noise, minibatch indices) use
    /// distinct lanes.
    pub fn stream(&self, lane: u64) -> ChaCha8Rng {
        let mut bytes = [0u8; 32];
        bytes[0..8].copy_from_slice(&self.seed.to_le_bytes());
        bytes[8..16].copy_from_slice(&self.worker.to_le_bytes());
        bytes[16..24].copy_from_slice(&self.iter.to_le_bytes());
        bytes[24..32].copy_from_slice(&(self.tag as u64).to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(bytes);
        rng.set_stream(lane);
        rng
    }
}

/// `n` standard normal draws.
pub fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}
