//! Named random substreams.
//!
//! Every consumer of randomness in a run draws from its own ChaCha stream,
//! keyed by the run seed and a fixed stream id, so adding draws in one
//! consumer never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    ReservoirInit,
    WeightInit,
    Env,
    Policy,
    Sampling,
    Warmup,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::ReservoirInit => 1,
            Stream::WeightInit => 2,
            Stream::Env => 3,
            Stream::Policy => 4,
            Stream::Sampling => 5,
            Stream::Warmup => 6,
        }
    }
}

/// Generator for `stream` under `seed`.
pub fn substream(seed: u64, stream: Stream) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.id());
    rng
}
