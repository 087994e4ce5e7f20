//! Sub-seed derivation.
//!
//! Every random stream in a run is derived from the single master seed by a
//! label and a counter, so two runs with the same master seed draw identical
//! numbers on every platform. The derivation is:
//!
//! ```text
//! h = FNV-1a-64(label)
//! seed = splitmix64(splitmix64(master ^ h) ^ index)
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator used for every stochastic component.
pub type Rng = ChaCha8Rng;

fn fnv1a(label: &str) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in label.bytes() {
        hash ^= u64::from(byte);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, label: &str, index: u64) -> u64 {
    splitmix64(splitmix64(master ^ fnv1a(label)) ^ index)
}

pub fn rng_for(master: u64, label: &str, index: u64) -> Rng {
    Rng::seed_from_u64(derive_seed(master, label, index))
}
