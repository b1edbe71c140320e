//! Seeded random streams.
//!
//! Every consumer draws from a ChaCha8 stream keyed by the master seed. The
//! stream number is `domain << 40 | index`, so episode `e` of training and
//! evaluation realization `r` never share randomness and any substream can
//! be regenerated on its own.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Independent purposes a substream can serve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    /// Channel draw and random initial decision of a training episode.
    Episode = 1,
    /// Exploration and minibatch sampling during a training episode.
    Learner = 2,
    /// Channel draw of an evaluation realization.
    EvalChannel = 3,
    /// Initial decision or random phases of an evaluation realization.
    EvalAux = 4,
    /// Network weight initialization.
    Init = 5,
    /// Free for tests and ad-hoc tools.
    Scratch = 6,
}

pub fn substream(seed: u64, domain: Domain, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((domain as u64) << 40) | (index & ((1 << 40) - 1)));
    rng
}
