//! Mean-field Gaussian variational inference for wide, fully-connected
//! Bayesian neural networks.
//!
//! The crate is organised around the objects needed to study how the optimal
//! mean-field posterior behaves as the hidden width grows:
//!
//! - [`net`]: NTK-parameterized network, flat parameter layout, forward pass.
//! - [`mfvi`]: variational family, closed-form KL, reparameterized ELBO and
//!   its pathwise gradient, and the SGD training loop.
//! - [`nngp`]: infinite-width kernel recursion, activation moments and the
//!   Gaussian-process reference posterior.
//! - [`bounds`]: explicit numerical evaluation of the mean, second-moment and
//!   KL bounds, with every constant exposed.
//! - [`counterexample`]: the non-odd activation construction and the
//!   non-improvability family for odd activations.
//! - [`data`]: synthetic datasets, CSV ingestion, standardization and splits.
//! - [`harness`]: experiment orchestration, CSV/SVG emission.

pub mod bounds;
pub mod counterexample;
pub mod data;
mod error;
pub mod harness;
pub mod linalg;
pub mod mfvi;
pub mod net;
pub mod nngp;
pub mod quadrature;
pub mod stats;

pub use error::{Error, Result};

/// Deterministic RNG used throughout the crate.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Builds the crate RNG from a 64-bit seed.
pub fn rng_from_seed(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}
