use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a random stream is used for. Combined with an index it selects a ChaCha stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Creators = 1,
    Assignments = 2,
    Session = 3,
    Oracle = 4,
    OracleCreators = 5,
    Rerandomize = 6,
    Replicate = 7,
    Theory = 8,
}

const INDEX_BITS: u32 = 56;

/// Independent counter-based stream for `(seed, purpose, index)`.
///
/// Any thread can rebuild the stream for any index, so parallel and serial runs agree.
pub fn stream(seed: u64, purpose: Purpose, index: u64) -> ChaCha8Rng {
    debug_assert!(index < 1 << INDEX_BITS);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << INDEX_BITS) | (index & ((1 << INDEX_BITS) - 1)));
    rng
}
