//! Seeded random streams. Every stochastic component draws from its own
//! ChaCha8 stream derived from the scenario seed, so adding a component never
//! perturbs the draws of another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    /// Traffic generator of one UE.
    Traffic(u32),
    /// AMF challenge nonces.
    Nonce,
    /// Controller audit jitter.
    Audit,
    /// Random topology generation.
    Topology,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Traffic(ue) => (1 << 32) | ue as u64,
            Stream::Nonce => 2 << 32,
            Stream::Audit => 3 << 32,
            Stream::Topology => 4 << 32,
        }
    }
}

pub fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which.id());
    rng
}
