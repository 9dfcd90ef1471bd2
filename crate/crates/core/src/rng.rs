//! Named, order-independent random substreams.
//!
//! Every stochastic component derives its generator from the run seed, a
//! stream name and a tuple of indices, so results do not depend on the order
//! in which cells, days or models are processed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

/// Generator for `(seed, name, indices)`.
pub fn substream(seed: u64, name: &str, indices: &[u64]) -> StreamRng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update((name.len() as u64).to_le_bytes());
    hasher.update(name.as_bytes());
    for i in indices {
        hasher.update(i.to_le_bytes());
    }
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: u64 = substream(3, "simulate", &[1, 2]).random();
        let b: u64 = substream(3, "simulate", &[1, 2]).random();
        let c: u64 = substream(3, "simulate", &[2, 1]).random();
        let d: u64 = substream(3, "init", &[1, 2]).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }
}
