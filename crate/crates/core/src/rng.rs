use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent random streams derived from one user seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Split = 1,
    Shuffle = 2,
    Init = 3,
    Dropout = 4,
}

/// Deterministic generator for `(seed, stream, index)`. Different streams or
/// indices never share a key/nonce pair.
pub fn stream(seed: u64, which: Stream, index: u64) -> ChaCha8Rng {
    let key = seed ^ (which as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(index);
    rng
}
