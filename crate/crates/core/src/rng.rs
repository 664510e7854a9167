//! Seeded generator construction.
//!
//! Every random stream in the crate is a `ChaCha8Rng` keyed by a root seed
//! and a path of stream identifiers (chain id, ego index, fold, ...). The
//! same path always yields the same stream, so work can be split across
//! threads in any order without changing results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Mix a root seed with a path of stream identifiers into a new seed.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

/// Generator for the stream at `path` under `seed`.
pub fn stream(seed: u64, path: &[u64]) -> Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, path))
}
