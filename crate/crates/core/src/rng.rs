//! Seeded random-number streams.
//!
//! Every command derives all of its randomness from a single `u64` seed. To
//! keep independent consumers (parameter init, data order, latent draws, ...)
//! from perturbing each other, each consumer opens a named stream: the stream
//! name is hashed into the seed, so adding a draw to one stream never shifts
//! another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A deterministic RNG for one named consumer.
pub type Stream = ChaCha8Rng;

/// FNV-1a, fixed so stream derivation never depends on `std` hasher details.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Derive a sub-seed for the consumer `name`.
pub fn derive(seed: u64, name: &str) -> u64 {
    seed ^ fnv1a(name.as_bytes())
}

/// Open the stream `name` under `seed`.
pub fn stream(seed: u64, name: &str) -> Stream {
    ChaCha8Rng::seed_from_u64(derive(seed, name))
}

/// Standard-normal draws from a stream, always sampled in `f64` and narrowed,
/// so `f32` and `f64` tensors initialized from the same stream agree.
pub fn normal_f64(rng: &mut Stream) -> f64 {
    use rand_distr::Distribution;
    rand_distr::StandardNormal.sample(rng)
}
