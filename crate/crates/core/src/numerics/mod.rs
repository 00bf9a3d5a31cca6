//! Dense linear algebra and a small reverse-mode autodiff engine.

mod grad_check;
mod matrix;
mod tape;

pub use grad_check::{grad_check, GradCheckOutcome, REL_FLOOR};
pub use matrix::Matrix;
pub use tape::{GradientReport, Tape, Var};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("matrix {rows}x{cols} needs {} entries, got {len}", rows * cols)]
    DataLength { rows: usize, cols: usize, len: usize },
    #[error("non-finite value: {context}")]
    NonFinite { context: String },
    #[error("loss must be a 1x1 node, got {shape:?}")]
    NonScalarLoss { shape: (usize, usize) },
    #[error("parameter {0:?} registered twice on one tape")]
    DuplicateParam(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
