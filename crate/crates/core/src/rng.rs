//! Counter-based random streams.
//!
//! Every random quantity in a run is drawn from a ChaCha stream identified by
//! `(seed, run index, purpose)`. Streams never share state, so the number of
//! worker threads or the choice of algorithm cannot change the draws seen by
//! another part of the run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a stream is used for. The discriminant is part of the stream id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    /// Initial values of the main chain.
    Init = 0,
    /// Proposals and accept/reject uniforms of the main-chain φ update.
    Phi = 1,
    /// The auxiliary SAMC chain.
    Aux = 2,
    /// θ draws of the main chain (proposal sampling, exact draws, internal chains).
    Theta = 3,
    /// Anything else (grid construction, diagnostics replicates).
    Misc = 4,
}

const STREAMS_PER_RUN: u64 = 16;

/// Builds the generator for `(seed, run, purpose)`.
pub fn stream(seed: u64, run: u64, purpose: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(run.wrapping_mul(STREAMS_PER_RUN).wrapping_add(purpose as u64));
    rng
}

/// Generator for the `index`-th replicate of a replicated computation.
pub fn replicate(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    rng.set_stream(index);
    rng
}
