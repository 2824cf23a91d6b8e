//! Seeded RNG streams.
//!
//! Every stochastic component owns a `ChaCha8Rng` derived from the run seed
//! plus a stream id, so parallel workers never share generator state and any
//! trajectory is reproducible from `(seed, stream)` alone.

use rand::SeedableRng;
pub use rand_chacha::ChaCha8Rng as Rng;

/// Create the root generator for a run.
pub fn root(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Derive an independent stream from a seed and a stream id.
///
/// ChaCha streams are cryptographically independent, so `stream(s, a)` and
/// `stream(s, b)` never correlate for `a != b`.
pub fn stream(seed: u64, id: u64) -> Rng {
    let mut rng = Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Serializable snapshot of a generator (seed words, stream, position).
#[derive(Debug, Clone, PartialEq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

pub fn save_state(rng: &Rng) -> RngState {
    RngState {
        seed: rng.get_seed(),
        stream: rng.get_stream(),
        word_pos: rng.get_word_pos(),
    }
}

pub fn restore_state(state: &RngState) -> Rng {
    let mut rng = Rng::from_seed(state.seed);
    rng.set_stream(state.stream);
    rng.set_word_pos(state.word_pos);
    rng
}
