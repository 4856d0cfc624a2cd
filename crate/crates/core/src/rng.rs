//! Seeded random streams.
//!
//! Every randomized operation draws from ChaCha8 seeded through
//! `SeedableRng::seed_from_u64` (the PCG32-expanded 64-bit seed defined by
//! `rand_core`). Independent sub-streams are selected with ChaCha's stream
//! counter so that, for example, the seeds chosen for a Voronoi index do
//! not depend on how many probes were drawn before them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}
