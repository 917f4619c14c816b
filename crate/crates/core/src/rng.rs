//! Reproducible random streams.
//!
//! Every trajectory or sample batch owns one [`RngStream`] identified by
//! `(master_seed, stream_index)`. Streams are ChaCha8 keystreams sharing the
//! key derived from the master seed and differing in the 64-bit stream
//! word, so they never overlap and do not depend on scheduling.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Stream-index offsets keeping the different consumers of one master seed apart.
pub mod lanes {
    pub const CHAIN: u64 = 0;
    pub const TRANSITIONS: u64 = 1 << 40;
    pub const ENGINE: u64 = 2 << 40;
    pub const BOOTSTRAP: u64 = 3 << 40;
    pub const REFERENCE: u64 = 4 << 40;
    pub const SELFTEST: u64 = 5 << 40;
}

#[derive(Debug, Clone)]
pub struct RngStream {
    master_seed: u64,
    stream_index: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(master_seed: u64, stream_index: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(master_seed);
        inner.set_stream(stream_index);
        Self {
            master_seed,
            stream_index,
            inner,
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn stream_index(&self) -> u64 {
        self.stream_index
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}
