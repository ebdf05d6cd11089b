//! Seeded randomness with named, independent sub-streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator handed out by [`RandomSource`].
pub type Rng = ChaCha8Rng;

/// A seed from which independent streams are derived by label and index.
///
/// The same (seed, label, index) always yields the same stream, so work can
/// be split across threads without changing results.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RandomSource {
    seed: u64,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

impl RandomSource {
    pub fn new(seed: u64) -> Self {
        RandomSource { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn derive(&self, label: &str, index: u64) -> u64 {
        splitmix(splitmix(self.seed ^ fnv1a(label)) ^ splitmix(index.wrapping_add(0x5851_F42D)))
    }

    /// A generator for the sub-stream `(label, index)`.
    pub fn stream(&self, label: &str, index: u64) -> Rng {
        Rng::seed_from_u64(self.derive(label, index))
    }

    /// A new source for nested work, e.g. one Monte Carlo repetition.
    pub fn child(&self, label: &str, index: u64) -> RandomSource {
        RandomSource::new(self.derive(label, index))
    }
}
