//! Reproducible random number generation.
//!
//! All randomness in the crate flows through [`SeedRng`], a ChaCha8 stream
//! cipher generator. ChaCha output is specified byte-for-byte, so a fixed seed
//! produces identical tensors on every platform. Sub-seeds for independent
//! purposes (background texture, object texture, noise draws) are derived with
//! [`derive_seed`] so that streams never overlap.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::scalar::Scalar;

/// The crate-wide deterministic generator (ChaCha with 8 rounds).
pub type SeedRng = ChaCha8Rng;

/// Build the named generator from a 64-bit seed.
pub fn rng_from_seed(seed: u64) -> SeedRng {
    SeedRng::seed_from_u64(seed)
}

/// Derive an independent sub-seed for a named purpose.
///
/// FNV-1a over the tag, xor-folded with the base seed. Stable across runs and
/// platforms by construction.
pub fn derive_seed(base: u64, tag: &str) -> u64 {
    base ^ fnv1a64(tag.as_bytes())
}

/// FNV-1a 64-bit hash. Also used for partition and alignment-map checksums.
pub(crate) fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Incremental FNV-1a hasher for structured checksums.
#[derive(Debug, Clone)]
pub(crate) struct Fnv64 {
    state: u64,
}

impl Fnv64 {
    pub fn new() -> Self {
        Fnv64 {
            state: 0xcbf2_9ce4_8422_2325,
        }
    }

    pub fn write_bytes(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.state ^= u64::from(b);
            self.state = self.state.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    pub fn write_u64(&mut self, v: u64) {
        self.write_bytes(&v.to_le_bytes());
    }

    pub fn write_usize(&mut self, v: usize) {
        self.write_u64(v as u64);
    }

    pub fn finish(&self) -> u64 {
        self.state
    }
}

/// Draw one standard-normal sample.
///
/// Sampling always happens in `f64` and is then cast, so the single- and
/// double-precision streams see the same underlying draws.
pub fn standard_normal<T: Scalar>(rng: &mut SeedRng) -> T {
    let v: f64 = rng.sample(StandardNormal);
    T::from_f64(v)
}
