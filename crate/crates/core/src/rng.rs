//! Deterministic random streams.
//!
//! Rendering draws from counter-based streams keyed on `(seed, px, py, sample)`
//! so every pixel sees the same numbers regardless of which worker renders it.
//! Procedural generation uses one ChaCha stream per purpose tag so that, for
//! example, changing the leaf count does not move the nuts.

use rand::SeedableRng;
use rand::RngCore;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Order-sensitive hash of a key tuple.
pub fn hash_key(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(GOLDEN, |h, &p| mix64(h.wrapping_add(GOLDEN) ^ mix64(p.wrapping_add(h))))
}

/// 64-bit FNV-1a, used to turn purpose tags into key words.
pub fn tag_hash(tag: &str) -> u64 {
    tag.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Stream whose n-th output is a pure function of `(key, n)`.
#[derive(Debug, Clone)]
pub struct CounterRng {
    key: u64,
    counter: u64,
}

impl CounterRng {
    pub fn new(key: u64) -> Self {
        Self { key, counter: 0 }
    }

    pub fn for_pixel(seed: u64, px: u32, py: u32, sample: u32) -> Self {
        Self::new(hash_key(&[seed, px as u64, py as u64, sample as u64]))
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

impl RngCore for CounterRng {
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        let n = self.counter;
        self.counter = self.counter.wrapping_add(1);
        mix64(self.key ^ mix64(n.wrapping_mul(GOLDEN)))
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let bytes = self.next_u64().to_le_bytes();
            chunk.copy_from_slice(&bytes[..chunk.len()]);
        }
    }
}

/// Independent generator for one purpose of one seed.
pub fn purpose_rng(seed: u64, tag: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(hash_key(&[seed, tag_hash(tag)]))
}

/// Derived seed for the `index`-th child of `seed` (trees, images, ...).
pub fn child_seed(seed: u64, tag: &str, index: u64) -> u64 {
    hash_key(&[seed, tag_hash(tag), index])
}
