//! Seed derivation and random streams.
//!
//! Every random stream in the crate is a ChaCha8 generator (counter based,
//! 64-bit seedable). Streams are derived from a master seed by folding a
//! path of integers through the SplitMix64 finaliser:
//!
//! ```text
//! key_0     = mix(master)
//! key_{i+1} = mix(key_i ^ mix(path[i] + GOLDEN * (i + 1)))
//! stream    = ChaCha8Rng::seed_from_u64(key_n)
//! ```
//!
//! The first path element is a [`Purpose`] tag so that, for example, the data
//! stream and the SGD stream of the same run never coincide. Sweeps use paths
//! like `[Purpose::Sgd, cell, seed_index]`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// What a derived stream is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Data = 1,
    Sgd = 2,
    MonteCarlo = 3,
    Sweep = 4,
}

/// SplitMix64 output function.
#[inline]
pub fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Fold `path` into a 64-bit key under `master`.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    let mut key = mix(master);
    for (i, &p) in path.iter().enumerate() {
        key = mix(key ^ mix(p.wrapping_add(GOLDEN.wrapping_mul(i as u64 + 1))));
    }
    key
}

pub fn stream(master: u64, purpose: Purpose, path: &[u64]) -> StreamRng {
    let mut full = Vec::with_capacity(path.len() + 1);
    full.push(purpose as u64);
    full.extend_from_slice(path);
    StreamRng::seed_from_u64(derive_seed(master, &full))
}
