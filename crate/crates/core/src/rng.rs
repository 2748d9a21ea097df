//! Named random sub-streams derived from one run seed.
//!
//! Each consumer draws from its own ChaCha stream, so adding draws to one
//! stream never shifts the values another stream produces.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Data = 1,
    Init = 2,
    Noise = 3,
    Epsilon = 4,
    ValidationEpsilon = 5,
    Shuffle = 6,
}

pub fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    substream(seed, which as u64)
}

/// Stream for an arbitrary id (used for per-sequence generator streams).
pub fn substream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_independent_and_reproducible() {
        let a: u64 = stream(7, Stream::Noise).random();
        let b: u64 = stream(7, Stream::Noise).random();
        let c: u64 = stream(7, Stream::Init).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
