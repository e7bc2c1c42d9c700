//! Seeded, splittable random number streams.
//!
//! Every stochastic step in the pipeline draws from an [`RngStream`]
//! identified by `(master_seed, stream_id)`. Streams with the same identity
//! replay the same sequence; distinct stream ids are statistically
//! independent (they select different ChaCha nonces). This is what makes
//! whole experiments bit-reproducible even when work is distributed across
//! threads: each unit of work derives its own stream up front instead of
//! sharing a sequential generator.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStream {
    pub master_seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        Self {
            master_seed,
            stream_id,
        }
    }

    /// Root stream of a run.
    pub fn root(master_seed: u64) -> Self {
        Self::new(master_seed, 0)
    }

    /// Derive a child stream. Children of distinct `(parent, tag)` pairs get
    /// distinct ids with overwhelming probability (64-bit mixed space).
    pub fn derive(&self, tag: u64) -> Self {
        Self {
            master_seed: self.master_seed,
            stream_id: splitmix64(self.stream_id ^ splitmix64(tag ^ 0x9e37_79b9_7f4a_7c15)),
        }
    }

    /// Instantiate the generator for this stream.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.stream_id.into());
        rng
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}
