//! Portable counter-based random streams for the Monte Carlo components.
//!
//! Stream `(seed, stream)` is an independent SplitMix64 sequence whose state
//! is derived by mixing the two keys. Results are therefore independent of
//! scheduling: replication `r` always consumes stream `(seed, r)` no matter
//! which thread runs it.

#[derive(Debug, Clone)]
pub struct StreamRng {
    state: u64,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix64(mut x: u64) -> u64 {
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

impl StreamRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let state = mix64(seed ^ GOLDEN).wrapping_add(mix64(stream).wrapping_mul(GOLDEN));
        StreamRng {
            state: mix64(state),
        }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix64(self.state)
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `0..n`.
    #[inline]
    pub fn next_below(&mut self, n: usize) -> usize {
        (self.next_f64() * n as f64) as usize % n
    }
}

/// Derives a sub-seed for an independent family of streams (per candidate,
/// per learning rate, ...).
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    mix64(seed.wrapping_add(mix64(tag.wrapping_mul(GOLDEN))))
}
