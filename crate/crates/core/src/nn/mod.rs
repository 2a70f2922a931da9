//! Minimal neural-network toolkit: autodiff tape, parameters, optimizer,
//! feed-forward heads and checkpoints.

pub mod checkpoint;
pub mod ff;
pub mod optim;
pub mod params;
pub mod tape;

pub use ff::FeedForward;
pub use optim::{Adam, AdamConfig};
pub use params::{ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
