//! Exact cosine top-k search over report embeddings and retrieval-based
//! zero-shot classification.

mod index;
mod zeroshot;

pub use index::{build_index, load_report_index, save_report_index, VectorIndex};
pub use zeroshot::{zeroshot_classify, Aggregation, ZeroShot, ZeroShotConfig, ZeroShotResult};

use thiserror::Error;

use crate::teacher::TeacherError;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("index is empty")]
    Empty,
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("zero vector for id {0:?}")]
    ZeroVector(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("k = {k} exceeds index size {count}")]
    KTooLarge { k: usize, count: usize },
    #[error("unknown report id {0:?}")]
    UnknownId(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Teacher(#[from] TeacherError),
    #[error("sidecar: {0}")]
    Sidecar(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
