//! Seeded sub-streams. Every random component of every replicate draws from its
//! own ChaCha stream, so results do not depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    Truth = 0,
    Omega = 1,
    Operator = 2,
    Design = 3,
    Instrument = 4,
}

/// Stream id: the truth uses the bare component code; replicate `r` uses
/// `((r + 1) << 4) | code`, so the two families never collide.
pub fn stream_id(replicate: Option<u64>, component: Component) -> u64 {
    let code = component as u64;
    match replicate {
        None => code,
        Some(r) => ((r + 1) << 4) | code,
    }
}

pub fn substream(seed: u64, replicate: Option<u64>, component: Component) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(replicate, component));
    rng
}

pub fn normal<R: rand::Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}
