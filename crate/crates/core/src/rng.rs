//! Seeded, splittable random streams.
//!
//! A stream is identified by `(seed, stream)`. The 256-bit ChaCha20 key is
//! expanded from `seed` with SplitMix64 and `stream` selects the ChaCha
//! stream (nonce), so every pair yields an independent, platform-stable
//! sequence. Sub-streams for nested indices are derived by hashing the index
//! path into a new stream id.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

/// One SplitMix64 step: returns the output and advances the state.
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a path of indices into one 64-bit value.
pub fn derive_id(parts: &[u64]) -> u64 {
    let mut state = 0x6A09_E667_F3BC_C908u64;
    let mut out = splitmix64(&mut state);
    for &p in parts {
        state ^= p.wrapping_mul(0xD1B5_4A32_D192_ED03);
        out = splitmix64(&mut state) ^ out.rotate_left(17);
    }
    out
}

#[derive(Clone, Debug)]
pub struct SeededRng {
    seed: u64,
    stream: u64,
    inner: ChaCha20Rng,
}

impl SeededRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut key = [0u8; 32];
        let mut state = seed;
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        let mut inner = ChaCha20Rng::from_seed(key);
        inner.set_stream(stream);
        Self {
            seed,
            stream,
            inner,
        }
    }

    /// Stream keyed by an index path, e.g. `(domain, column)`.
    pub fn for_path(seed: u64, path: &[u64]) -> Self {
        Self::new(seed, derive_id(path))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Independent child stream under the same seed.
    pub fn child(&self, index: u64) -> Self {
        Self::new(self.seed, derive_id(&[self.stream, index]))
    }
}

impl RngCore for SeededRng {
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
