//! Named, independently seeded RNG substreams.
//!
//! Each consumer of randomness gets its own ChaCha stream derived from the
//! run seed, so adding draws in one place never shifts another's
//! sequence; trajectories stay reproducible and resumable. Stream states
//! serialize into checkpoints.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RngStreams {
    /// Uniform island choice per iteration.
    pub island: ChaCha8Rng,
    /// Parent selection: branch draw plus pool index.
    pub parent: ChaCha8Rng,
    /// Diverse-reference draw.
    pub reference: ChaCha8Rng,
    /// One-time dataset shuffle at run start.
    pub shuffle: ChaCha8Rng,
}

impl RngStreams {
    pub fn new(seed: u64) -> Self {
        let stream = |id: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(id);
            rng
        };
        RngStreams {
            island: stream(1),
            parent: stream(2),
            reference: stream(3),
            shuffle: stream(4),
        }
    }
}
