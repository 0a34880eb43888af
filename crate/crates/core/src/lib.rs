//! Consistency trajectory models at desk scale.
//!
//! The crate pairs an analytic Gaussian-mixture teacher with a small MLP
//! student `g_θ(x, t, s)`, the anytime-to-anytime map
//! `G_θ(x, t, s) = (s/t)·x + (1 − s/t)·g_θ(x, t, s)`, the combined
//! trajectory/denoising/adversarial objective, the γ-sampler family, and
//! numerical property checks run against closed-form ground truth.

pub mod cli;
pub mod error;
pub mod eval;
pub mod model;
pub mod oracle;
pub mod sampling;
pub mod schedule;
pub mod solvers;
pub mod training;

pub use error::{CtmError, Result};

/// Deterministic generator used throughout; every stochastic routine takes
/// one of these by `&mut`.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Seeded generator for `seed`, substream `stream`.
pub fn rng_for(seed: u64, stream: u64) -> Rng {
    use rand::SeedableRng;
    let mut rng = Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
