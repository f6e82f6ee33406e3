//! Minimal differentiable-network toolkit.
//!
//! Networks are plain structs describing an architecture; their arrays live
//! in a [`ParamStore`]. A forward pass returns a tape which the matching
//! `backward` consumes to accumulate parameter gradients and return the
//! gradient with respect to the input. All code is generic over
//! [`Scalar`] so the same graphs run in `f32` for training and in `f64`
//! for finite-difference checks.

mod checkpoint;
mod dense;
mod encoder;
mod gaussian;
mod gradcheck;
mod lstm;
mod matrix;
mod mlp;
mod optim;
mod params;
mod scalar;

pub use checkpoint::{Checkpoint, Tensor};
pub use dense::Dense;
pub use encoder::{RnnEncoder, RnnEncoderTape};
pub use gaussian::{
    kl_grad, kl_terms, squash_correction_grad, squashed_log_prob, tanh_squash, tanh_squash_grad, DiagGaussian, GaussianBatch, KlGrad,
    LOG_STD_MAX, LOG_STD_MIN,
};
pub use gradcheck::{grad_check, relative_error, GradCheckReport};
pub use lstm::{Lstm, LstmTape};
pub use matrix::Matrix;
pub use mlp::{Activation, HeadKind, Mlp, MlpTape, Mode, NetSpec};
pub use optim::{Optimizer, OptimizerKind, ScalarAdam};
pub use params::{ParamEntry, ParamId, ParamStore};
pub use scalar::{c as lit, Scalar};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: expected width {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("parameter layouts differ")]
    LayoutMismatch,
    #[error("empty input sequence")]
    EmptySequence,
    #[error("checkpoint entry `{0}` missing")]
    MissingEntry(String),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
