//! Discrete diffusion over a vocabulary extended with `m` interchangeable
//! absorbing (mask) indices.
//!
//! The crate is organised bottom-up:
//!
//! - [`vocab`]: tokens, sequences and the flat `d + m` layout
//! - [`schedule`]: survival function `α_t` and reverse timelines
//! - [`kernels`]: forward corruption, transition matrices, the analytic
//!   reverse kernel and a brute-force posterior oracle
//! - [`dataset`]: synthetic datasets with exactly known distributions
//! - [`denoiser`]: the `p(x_0 | x_t)` contract with an exact-posterior
//!   oracle and a trainable linear-softmax model
//! - [`training`]: time-weighted and unweighted masked cross-entropy losses
//! - [`samplers`]: rehash, MVTM, DFM, hybrid and inpainting samplers
//! - [`eval`]: total variation, diversity, sampler benchmarks and sweeps

pub mod dataset;
pub mod denoiser;
pub mod error;
pub mod eval;
pub mod kernels;
pub mod rng;
pub mod samplers;
pub mod schedule;
pub mod training;
pub mod vocab;

pub use error::{Error, Result};
pub use dataset::ToyDataset;
pub use vocab::{Label, LabeledExample, Sequence, Token, VocabSpec};
