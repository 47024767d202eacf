//! Deterministic random substreams.
//!
//! Every stochastic component draws from a ChaCha8 stream whose seed is a
//! hash of the master seed and a path of integers (iteration, gene, run, ...).
//! Two computations that use the same path see the same stream regardless of
//! how work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from a parent seed and a path.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(master), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn substream(master: u64, path: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(master, path))
}

/// One stream per gene, all derived from `seed`.
pub fn gene_streams(seed: u64, genes: usize) -> Vec<Rng> {
    (0..genes).map(|g| substream(seed, &[g as u64])).collect()
}
