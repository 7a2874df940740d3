//! Seeded random substreams.
//!
//! Every consumer of randomness gets its own ChaCha stream derived from the
//! run seed and a `(purpose, index)` label, so adding a model or a policy
//! never shifts another consumer's draws.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

fn stream_id(purpose: &str, index: u64) -> u64 {
    // FNV-1a over the label, then the index.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in purpose.bytes().chain(index.to_le_bytes()) {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn substream(seed: u64, purpose: &str, index: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(purpose, index));
    rng
}

/// Exponential draw with the given mean by inverse transform.
pub fn exponential<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> f64 {
    let u: f64 = rng.random();
    -mean * (1.0 - u).ln()
}
