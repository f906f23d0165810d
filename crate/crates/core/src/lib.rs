//! Conditional generative moment-matching networks.
//!
//! The crate is organised bottom-up:
//!
//! - [`kernels`] and [`linalg`]: kernel functions, Gram matrices and the
//!   Cholesky-backed regularized solves every estimator relies on.
//! - [`embeddings`]: empirical mean embeddings, the biased MMD² estimator,
//!   conditional embedding operators and the CMMD² estimator.
//! - [`net`]: the generator `y = f(x, h | w)` with reverse-mode gradients.
//! - [`trainer`]: minibatch training on the CMMD² objective with Adam.
//! - [`distill`]: distilling a Bayesian teacher's predictive distribution
//!   into a generator.
//! - [`datasets`]: synthetic generators plus CSV and IDX ingestion.
//! - [`gradcheck`]: finite-difference diagnostics.
//!
//! All arithmetic is `f64`.

pub mod datasets;
pub mod distill;
pub mod embeddings;
mod error;
pub mod gradcheck;
pub mod kernels;
pub mod linalg;
pub mod net;
mod samples;
pub mod trainer;

pub use datasets::{Domain, PairedDataset};
pub use embeddings::{
    cmmd2, conditional_expectation, conditional_weights, fit_conditional, mmd2_as_trace,
    mmd2_biased, CmmdEstimate, CmmdPlan, ConditionalOperator, MeanEmbedding, Regularization,
};
pub use error::{Error, Result};
pub use kernels::{gram, kernel_eval, median_bandwidth, GramMatrix, KernelSpec};
pub use linalg::{reg_inverse, RegularizedInverse};
pub use net::{Activation, GeneratorNet, HiddenSample, InputMode, LayerSpec, NetGradients};
pub use samples::Samples;
pub use trainer::{KernelChoice, TrainConfig, TrainRun};

/// Deterministic RNG used throughout the crate.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Builds the crate RNG from a seed.
pub fn rng_from_seed(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}
