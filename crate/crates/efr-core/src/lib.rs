//! Equivariant feature rotation for few-shot generative adaptation, at desk scale.
//!
//! The library provides four numerical building blocks and a toy simulator
//! that exercises them end to end:
//!
//! - [`lie_rotation`]: rotations in SO(d) parameterized by unconstrained
//!   matrices through the skew projection and matrix exponential, with exact
//!   derivatives for gradient-based training.
//! - [`align_losses`]: cosine-similarity graphs and the self-rotated
//!   instance-wise contrastive alignment loss, with analytic gradients.
//! - [`ot_solver`]: the Gromov-Wasserstein objective on similarity graphs, an
//!   entropic coupling solver, and the sliced variant with gradients.
//! - [`gradcheck`]: a central finite-difference oracle used to validate every
//!   analytic gradient shipped here.
//! - [`adaptation_sim`]: toy generator/discriminator pairs on synthetic 2D
//!   mixtures, the combined training objective, Adam, checkpointing, and
//!   evaluation metrics.
//!
//! All computation is deterministic given a seed: randomness flows from a
//! single per-run seed through labeled counter-based streams (see [`rng`]).

use thiserror::Error;

pub mod adaptation_sim;
pub mod align_losses;
pub mod gradcheck;
pub mod lie_rotation;
pub mod linalg;
pub mod ot_solver;
pub mod rng;

/// Error variants shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// An input matrix or vector contains NaN or infinity.
    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),

    /// Incompatible shapes between operands.
    #[error("shape mismatch in {context}: expected {expected}, got {found}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        found: String,
    },

    /// Dimension outside the supported range.
    #[error("dimension {dim} outside supported range {min}..={max}")]
    DimOutOfRange { dim: usize, min: usize, max: usize },

    /// A feature row has zero Euclidean norm, so cosine similarity is undefined.
    #[error("row {index} has zero norm; cosine similarity undefined")]
    ZeroNormRow { index: usize },

    /// Too few samples for the requested statistic.
    #[error("batch too small: need at least {min} samples, got {got}")]
    BatchTooSmall { min: usize, got: usize },

    /// Exhaustive enumeration requested beyond its size limit.
    #[error("exhaustive coupling search supports N <= {max}, got {got}")]
    SizeLimit { max: usize, got: usize },

    /// A function under finite differencing returned a non-finite value.
    #[error("non-finite function value while probing coordinate {coordinate}")]
    NonFiniteEval { coordinate: usize },

    /// A training loss left the finite range; carries a diagnostic dump.
    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: u64, detail: String },

    /// Malformed configuration file or unknown key.
    #[error("config error: {0}")]
    Config(String),

    /// Malformed or mismatched checkpoint container.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Invalid argument that fits no more specific variant.
    #[error("{0}")]
    InvalidInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
