//! Named random streams derived from one master seed.
//!
//! Every consumer draws from its own stream, and every iteration gets a fresh
//! generator keyed by `(master, stream, index)`. Resuming at iteration `k`
//! therefore sees exactly the draws an uninterrupted run would have seen.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    Data,
    Alpha,
    Init,
    Noise,
    /// Held-out or synthetic evaluation draws.
    Eval,
    /// Service-side random stylization.
    Randomize,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::Data => 0x6461_7461,
            Stream::Alpha => 0x616c_7068,
            Stream::Init => 0x696e_6974,
            Stream::Noise => 0x6e6f_6973,
            Stream::Eval => 0x6576_616c,
            Stream::Randomize => 0x7261_6e64,
        }
    }
}

/// Generator for draw number `index` of `stream`.
pub fn stream_rng(master: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    let mut seed = [0u8; 32];
    seed[..8].copy_from_slice(&master.to_le_bytes());
    seed[8..16].copy_from_slice(&stream.tag().to_le_bytes());
    seed[16..24].copy_from_slice(&index.to_le_bytes());
    ChaCha8Rng::from_seed(seed)
}
