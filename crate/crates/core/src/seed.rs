//! Seed derivation. Child seeds are a splitmix64 hash of
//! `(master, tag, index)` so that every task draws from its own stream and
//! results do not depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn tag_hash(tag: &str) -> u64 {
    // FNV-1a
    tag.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

pub fn derive_seed(master: u64, tag: &str, index: u64) -> u64 {
    let h = splitmix64(master ^ splitmix64(tag_hash(tag)));
    splitmix64(h ^ splitmix64(index.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeedSequence {
    master: u64,
}

impl SeedSequence {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    pub fn child(&self, tag: &str, index: u64) -> u64 {
        derive_seed(self.master, tag, index)
    }

    pub fn subsequence(&self, tag: &str, index: u64) -> SeedSequence {
        SeedSequence::new(self.child(tag, index))
    }

    pub fn rng(&self, tag: &str, index: u64) -> Rng {
        Rng::seed_from_u64(self.child(tag, index))
    }
}

pub fn rng_from_seed(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Uniform variate in `(0, 1)` from a counter, for noise that must be
/// addressable by position rather than drawn sequentially.
#[inline]
pub fn counter_uniform(key: u64) -> f64 {
    ((splitmix64(key) >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal variate addressed by `(seed, step, site)`.
pub fn counter_normal(seed: u64, step: u64, site: u64) -> f64 {
    let base = splitmix64(seed ^ splitmix64(step.wrapping_mul(0xD6E8_FEB8_6659_FD93) ^ site));
    let u1 = counter_uniform(base);
    let u2 = counter_uniform(base ^ 0xA076_1D64_78BD_642F);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}
