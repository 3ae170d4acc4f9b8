//! Minimal differentiable MLP engine.
//!
//! Everything the generators need and nothing more: dense feed-forward
//! networks with ReLU hidden layers and identity outputs, manual
//! backpropagation over that fixed topology, an adaptive-moment optimizer,
//! reparameterized Gaussian sampling, seeded random streams, and a
//! finite-difference gradient checker.
//!
//! Parameters are stored as `f32` (the at-rest precision of checkpoints and
//! feature files); all arithmetic runs in `f64` so finite-difference oracles
//! hold at tight tolerances.

mod gaussian;
mod gradcheck;
mod mlp;
mod optim;
mod rng;

pub use gaussian::{
    reparameterize, reparameterize_backward, reparameterize_with, GaussianParams, LOG_VAR_MAX,
    LOG_VAR_MIN,
};
pub use gradcheck::{grad_check, grad_check_skipping, GradCheckReport, DEFAULT_FD_STEP};
pub use mlp::{MlpGrads, MlpNet, MlpTrace};
pub use optim::{AdamState, DEFAULT_LEARNING_RATE};
pub use rng::RngStream;

use thiserror::Error;

/// Errors raised by the network engine.
#[derive(Debug, Error)]
pub enum NnError {
    /// An input, gradient, or parameter vector had the wrong length.
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    /// A value that must be finite was NaN or infinite.
    #[error("non-finite value in {context}")]
    NonFinite { context: &'static str },
    /// The optimizer received a NaN or infinite gradient.
    #[error("non-finite gradient at optimizer step {step} (parameter {index})")]
    NonFiniteGradient { step: u64, index: usize },
    /// Layer sizes do not describe a valid network.
    #[error("invalid network topology: {0}")]
    BadTopology(String),
    /// A forward trace was replayed against a network with a different shape.
    #[error("forward trace does not match this network")]
    TraceMismatch,
}
