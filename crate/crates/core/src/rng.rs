//! Seeded random streams.
//!
//! Every consumer of randomness gets its own ChaCha stream derived from the
//! run seed, so changing how one component draws numbers never shifts the
//! draws seen by another.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
pub use rand_chacha::ChaCha8Rng;

use crate::math::{cos, log, sqrt, PI};

/// Stream ids used by the optimizer.
pub mod streams {
    pub const DESIGN: u64 = 1;
    pub const CLASSIFIER: u64 = 2;
    pub const SURROGATE: u64 = 3;
    pub const ACQUISITION: u64 = 4;
    pub const VARIATION: u64 = 5;
    pub const MC_DROPOUT: u64 = 6;
    pub const BASELINE: u64 = 7;
    pub const ANALYSIS: u64 = 8;
    /// Reserved for Monte Carlo hypervolume; never shared with search.
    pub const HYPERVOLUME: u64 = 0x4856;
}

pub fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Standard normal draw by Box-Muller.
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen::<f64>();
    sqrt(-2.0 * log(u1)) * cos(2.0 * PI * u2)
}
