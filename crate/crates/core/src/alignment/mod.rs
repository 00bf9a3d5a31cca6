//! Projection heads, centered kernel alignment, and the joint training loop.
//!
//! The objective per optimizer step is `λa·align + λs·ssm`, where `align` is
//! `1 − CKA` (or a normalized MSE) between projected audio and projected
//! teacher embeddings over a batch, and `ssm` is the masked-patch
//! reconstruction error of the encoder.

mod cka;
mod head;
mod optim;
mod train;

pub use cka::{align_loss, align_loss_on_tape, cka, cka_on_tape, total_loss};
pub use head::{dropout_mask, ProjectionHead, HEAD_HIDDEN, SHARED_DIM};
pub use optim::{adamw_step, lr_at, AdamState, AdamWConfig};
pub use train::{
    objective_on_tape, train, BatchSample, HeadMasks, Objective, StepMetrics, TrainConfig, TrainItem, TrainOutcome,
    TrainedModel,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::EncoderError;
use crate::numerics::NumericsError;
use crate::signal::SignalError;
use crate::teacher::TeacherError;

#[derive(Debug, Error)]
pub enum AlignError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Teacher(#[from] TeacherError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Which Gram matrices CKA compares.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CkaMode {
    /// `H̄H̄ᵀ` (B×B); invariant to orthogonal transforms of the features.
    #[default]
    #[serde(alias = "sample_gram")]
    Sample,
    /// `H̄ᵀH̄` (d×d).
    #[serde(alias = "feature_gram")]
    Feature,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    #[default]
    Cka,
    Mse,
}
