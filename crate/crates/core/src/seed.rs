//! Stable seed derivation.
//!
//! Every random stream in the crate is seeded from a master seed mixed with a
//! role name or an index, so that one knob controls a whole experiment and
//! parallel work does not depend on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for a named role (e.g. `"split"`, `"train"`) under a master seed.
pub fn derive_seed(master: u64, role: &str) -> u64 {
    let mut h = FNV_OFFSET;
    for b in role.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    splitmix64(master ^ splitmix64(h))
}

/// Seed for the `index`-th item of a stream.
pub fn derive_index_seed(master: u64, index: u64) -> u64 {
    splitmix64(splitmix64(master) ^ index.wrapping_mul(0xd6e8_feb8_6659_fd93))
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
